//! Forward state integration, backward adjoint integration and trapezoid
//! quadrature on the uniform horizon grid.

use serde::{Deserialize, Serialize};

use crate::auglag::{Evaluator, MultiplierState};
use crate::error::{first_non_finite, Result, SolverError};
use crate::problem::{MassMatrix, Problem};
use crate::trajectory::{Grid, Trajectory};

/// Tolerances of the adaptive Dormand–Prince 5(4) integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rk45Tolerances {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub min_step: f64,
}

impl Default for Rk45Tolerances {
    fn default() -> Self {
        Rk45Tolerances {
            rel_tol: 1e-6,
            abs_tol: 1e-8,
            min_step: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum IntegratorChoice {
    Euler,
    ModifiedEuler,
    Heun,
    Rk45(Rk45Tolerances),
}

impl IntegratorChoice {
    pub fn name(&self) -> &'static str {
        match self {
            IntegratorChoice::Euler => "euler",
            IntegratorChoice::ModifiedEuler => "modeuler",
            IntegratorChoice::Heun => "heun",
            IntegratorChoice::Rk45(_) => "rk45",
        }
    }
}

/// Marches `ẏ = rhs(s, y)` over `n` equidistant nodes spaced `h` apart,
/// starting from `y0` at `s = 0`. Returns the node values, node-major.
pub(crate) fn march(
    method: &IntegratorChoice,
    h: f64,
    n: usize,
    y0: &[f64],
    mut rhs: impl FnMut(f64, &[f64], &mut [f64]),
    context: &str,
) -> Result<Trajectory> {
    let dim = y0.len();
    let mut out = Trajectory::zeros(dim, n);
    out.row_mut(0).copy_from_slice(y0);
    if let Some(k) = first_non_finite(y0) {
        return Err(SolverError::non_finite(format!("{context}, node 0"), k));
    }
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    let mut h_hint = h;
    let mut dopri = matches!(method, IntegratorChoice::Rk45(_)).then(|| Dopri::new(dim));
    for i in 0..n - 1 {
        let s = i as f64 * h;
        match method {
            IntegratorChoice::Euler => {
                rhs(s, &y, &mut k1);
                for j in 0..dim {
                    y[j] += h * k1[j];
                }
            }
            IntegratorChoice::ModifiedEuler => {
                rhs(s, &y, &mut k1);
                for j in 0..dim {
                    tmp[j] = y[j] + 0.5 * h * k1[j];
                }
                rhs(s + 0.5 * h, &tmp, &mut k2);
                for j in 0..dim {
                    y[j] += h * k2[j];
                }
            }
            IntegratorChoice::Heun => {
                rhs(s, &y, &mut k1);
                for j in 0..dim {
                    tmp[j] = y[j] + h * k1[j];
                }
                rhs(s + h, &tmp, &mut k2);
                for j in 0..dim {
                    y[j] += 0.5 * h * (k1[j] + k2[j]);
                }
            }
            IntegratorChoice::Rk45(tol) => {
                let s_end = if i + 2 == n { (n - 1) as f64 * h } else { s + h };
                dopri
                    .as_mut()
                    .expect("dopri workspace")
                    .integrate(&mut rhs, s, s_end, &mut y, tol, &mut h_hint)?;
            }
        }
        if let Some(k) = first_non_finite(&y) {
            return Err(SolverError::non_finite(format!("{context}, node {}", i + 1), k));
        }
        out.row_mut(i + 1).copy_from_slice(&y);
    }
    Ok(out)
}

/// Workspace of the Dormand–Prince 5(4) pair.
pub struct Dopri {
    k: [Vec<f64>; 7],
    stage: Vec<f64>,
    y_new: Vec<f64>,
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// difference between the 5th and 4th order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

impl Dopri {
    pub fn new(dim: usize) -> Self {
        Dopri {
            k: std::array::from_fn(|_| vec![0.0; dim]),
            stage: vec![0.0; dim],
            y_new: vec![0.0; dim],
        }
    }

    /// Integrates `ẏ = rhs(s, y)` from `s0` to `s1` in place. `h_hint` is the
    /// first trial step and receives the last accepted step size.
    pub fn integrate(
        &mut self,
        rhs: &mut impl FnMut(f64, &[f64], &mut [f64]),
        s0: f64,
        s1: f64,
        y: &mut [f64],
        tol: &Rk45Tolerances,
        h_hint: &mut f64,
    ) -> Result<()> {
        let dim = y.len();
        let mut s = s0;
        let mut h = h_hint.min(s1 - s0).max(tol.min_step);
        let mut fsal = false;
        while s < s1 {
            let remaining = s1 - s;
            let last = h >= remaining;
            if last {
                h = remaining;
            }
            if !fsal {
                rhs(s, y, &mut self.k[0]);
            }
            for st in 1..7 {
                for j in 0..dim {
                    let mut acc = 0.0;
                    for (q, a) in A[st].iter().enumerate().take(st) {
                        acc += a * self.k[q][j];
                    }
                    self.stage[j] = y[j] + h * acc;
                }
                if st == 6 {
                    self.y_new.copy_from_slice(&self.stage);
                }
                let (_, tail) = self.k.split_at_mut(st);
                rhs(s + C[st] * h, &self.stage, &mut tail[0]);
            }
            let mut err = 0.0;
            for j in 0..dim {
                let e: f64 = (0..7).map(|q| E[q] * self.k[q][j]).sum::<f64>() * h;
                let sc = tol.abs_tol + tol.rel_tol * y[j].abs().max(self.y_new[j].abs());
                err += (e / sc) * (e / sc);
            }
            let err = (err / dim.max(1) as f64).sqrt();
            if err.is_finite() && err <= 1.0 {
                s = if last { s1 } else { s + h };
                y.copy_from_slice(&self.y_new);
                let (first, rest) = self.k.split_at_mut(1);
                first[0].copy_from_slice(&rest[5]);
                fsal = true;
                *h_hint = h;
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h *= factor;
            } else {
                fsal = false;
                h *= if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.2, 1.0) } else { 0.25 };
                if h < tol.min_step && remaining > tol.min_step {
                    return Err(SolverError::StepUnderflow { t: s, step: h });
                }
            }
        }
        Ok(())
    }
}

/// Forward integration of `M ẋ = f(x, u, p, t0 + τ)` on `grid` from `x0`.
/// Controls are interpolated linearly between nodes.
#[allow(clippy::too_many_arguments)]
pub fn integrate_forward<P: Problem + ?Sized>(
    problem: &P,
    mass: Option<&MassMatrix>,
    method: &IntegratorChoice,
    grid: &Grid,
    t0: f64,
    u: &Trajectory,
    p: &[f64],
    x0: &[f64],
) -> Result<Trajectory> {
    let mut ui = vec![0.0; u.dim()];
    march(
        method,
        grid.dt(),
        grid.len(),
        x0,
        |tau, x, out| {
            u.interpolate(grid, tau, &mut ui);
            problem.f(out, t0 + tau, x, &ui, p);
            if let Some(m) = mass {
                m.solve_in_place(out);
            }
        },
        "forward integration",
    )
}

/// Backward integration of the adjoint `Mᵀλ̇ = −H_x` from
/// `Mᵀλ(T) = ∂V̄/∂x (x(T))`. States are interpolated by cubic Hermite
/// polynomials through the node rates; controls and multipliers linearly.
#[allow(clippy::too_many_arguments)]
pub fn integrate_adjoint<P: Problem + ?Sized>(
    ev: &mut Evaluator<'_, P>,
    mass: Option<&MassMatrix>,
    method: &IntegratorChoice,
    grid: &Grid,
    x: &Trajectory,
    u: &Trajectory,
    p: &[f64],
    mult: &MultiplierState,
) -> Result<Trajectory> {
    let nx = x.dim();
    let horizon = grid.horizon();
    let mut lam_t = vec![0.0; nx];
    ev.vbar_x(&mut lam_t, horizon, x.last(), p, &mult.terminal());
    if let Some(m) = mass {
        m.solve_transpose_in_place(&mut lam_t);
    }
    let mut xi = vec![0.0; nx];
    let mut ui = vec![0.0; u.dim()];
    let mut xdot = Trajectory::zeros(nx, grid.len());
    for i in 0..grid.len() {
        ev.problem().f(xdot.row_mut(i), ev.t0() + grid.time(i), x.row(i), u.row(i), p);
        if let Some(m) = mass {
            m.solve_in_place(xdot.row_mut(i));
        }
    }
    let mut mi = mult.buffer();
    let reversed = march(
        method,
        grid.dt(),
        grid.len(),
        &lam_t,
        |s, lam, out| {
            let tau = horizon - s;
            x.interpolate_hermite(&xdot, grid, tau, &mut xi);
            u.interpolate(grid, tau, &mut ui);
            mult.interpolate(grid, tau, &mut mi);
            // in reversed time s = T − τ the sign flips: dλ/ds = M⁻ᵀ H_x
            ev.h_x(out, tau, &xi, &ui, p, lam, &mi.as_mult());
            if let Some(m) = mass {
                m.solve_transpose_in_place(out);
            }
        },
        "adjoint integration",
    )?;
    let n = grid.len();
    let mut lam = Trajectory::zeros(nx, n);
    for i in 0..n {
        lam.row_mut(i).copy_from_slice(reversed.row(n - 1 - i));
    }
    Ok(lam)
}

/// Trapezoid rule for scalar samples on the grid.
pub fn quadrature(grid: &Grid, samples: &[f64]) -> f64 {
    let dt = grid.dt();
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = samples[1..n - 1].iter().sum();
    dt * (inner + 0.5 * (samples[0] + samples[n - 1]))
}

/// Componentwise trapezoid rule for vector samples.
pub fn quadrature_vec(grid: &Grid, samples: &Trajectory) -> Vec<f64> {
    (0..samples.dim())
        .map(|k| quadrature(grid, &samples.component(k)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::test_problems::ScalarLq;
    use crate::problem::{HookSet, ProblemDims, Setpoint};

    struct Linear {
        a: f64,
    }

    impl Problem for Linear {
        fn dims(&self) -> ProblemDims {
            ProblemDims::new(1, 1)
        }
        fn hooks(&self) -> HookSet {
            HookSet::F | HookSet::DFDX_MULT | HookSet::DFDU_MULT
        }
        fn f(&self, out: &mut [f64], _t: f64, x: &[f64], u: &[f64], _p: &[f64]) {
            out[0] = self.a * x[0] + u[0];
        }
        fn dfdx_mult(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64], v: &[f64]) {
            out[0] = self.a * v[0];
        }
        fn dfdu_mult(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64], v: &[f64]) {
            out[0] = v[0];
        }
    }

    struct Zero;

    impl Problem for Zero {
        fn dims(&self) -> ProblemDims {
            ProblemDims::new(2, 1)
        }
        fn hooks(&self) -> HookSet {
            HookSet::F | HookSet::DFDX_MULT | HookSet::DFDU_MULT
        }
        fn f(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64]) {
            out.fill(0.0);
        }
    }

    const ALL: [IntegratorChoice; 4] = [
        IntegratorChoice::Euler,
        IntegratorChoice::ModifiedEuler,
        IntegratorChoice::Heun,
        IntegratorChoice::Rk45(Rk45Tolerances { rel_tol: 1e-8, abs_tol: 1e-10, min_step: 1e-12 }),
    ];

    #[test]
    fn zero_field_is_constant() {
        let g = Grid::new(7, 1.0).unwrap();
        let u = Trajectory::zeros(1, 7);
        for m in &ALL {
            let x = integrate_forward(&Zero, None, m, &g, 0.0, &u, &[], &[1.0, 2.0]).unwrap();
            assert!(x.rows().all(|r| r == [1.0, 2.0]));
        }
    }

    #[test]
    fn heun_is_exact_on_linear_growth() {
        let g = Grid::new(4, 1.0).unwrap();
        let u = Trajectory::constant(4, &[1.0]);
        let x = integrate_forward(&Linear { a: 0.0 }, None, &IntegratorChoice::Heun, &g, 0.0, &u, &[], &[0.0])
            .unwrap();
        assert!((x.last()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rk45_matches_exponential() {
        let tol = Rk45Tolerances { rel_tol: 1e-8, abs_tol: 1e-12, min_step: 1e-14 };
        let g = Grid::new(5, 1.0).unwrap();
        let u = Trajectory::zeros(1, 5);
        let x = integrate_forward(&Linear { a: -1.0 }, None, &IntegratorChoice::Rk45(tol), &g, 0.0, &u, &[], &[1.0])
            .unwrap();
        let exact = (-1.0f64).exp();
        assert!((x.last()[0] - exact).abs() / exact < 1e-7, "{}", x.last()[0]);
    }

    fn final_error(method: IntegratorChoice, n: usize) -> f64 {
        let g = Grid::new(n, 1.0).unwrap();
        let u = Trajectory::zeros(1, n);
        let x = integrate_forward(&Linear { a: -1.0 }, None, &method, &g, 0.0, &u, &[], &[1.0]).unwrap();
        (x.last()[0] - (-1.0f64).exp()).abs()
    }

    #[test]
    fn convergence_orders() {
        for (method, ratio) in [
            (IntegratorChoice::Euler, 1.9),
            (IntegratorChoice::ModifiedEuler, 3.8),
            (IntegratorChoice::Heun, 3.8),
        ] {
            let coarse = final_error(method, 21);
            let fine = final_error(method, 41);
            assert!(coarse / fine >= ratio, "{}: {}", method.name(), coarse / fine);
        }
    }

    struct WithMass(f64);

    impl Problem for WithMass {
        fn dims(&self) -> ProblemDims {
            ProblemDims::new(2, 1)
        }
        fn hooks(&self) -> HookSet {
            HookSet::F | HookSet::DFDX_MULT | HookSet::DFDU_MULT
        }
        fn mass_matrix(&self) -> Option<Vec<f64>> {
            Some(vec![self.0, 0.0, 0.0, self.0])
        }
        fn f(&self, out: &mut [f64], _t: f64, x: &[f64], u: &[f64], _p: &[f64]) {
            out[0] = x[1];
            out[1] = u[0] - x[0];
        }
    }

    #[test]
    fn mass_matrix_scales_rate() {
        let g = Grid::new(2, 1e-3).unwrap();
        let u = Trajectory::constant(2, &[1.0]);
        let x0 = [0.5, 2.0];
        let step = |scale: f64| {
            let pr = WithMass(scale);
            let m = MassMatrix::factorize(&pr.mass_matrix().unwrap(), 2).unwrap();
            let x = integrate_forward(&pr, Some(&m), &IntegratorChoice::Euler, &g, 0.0, &u, &[], &x0).unwrap();
            [x.last()[0] - x0[0], x.last()[1] - x0[1]]
        };
        let (one, two) = (step(1.0), step(2.0));
        assert!((one[0] - 2.0 * two[0]).abs() < 1e-15 && (one[1] - 2.0 * two[1]).abs() < 1e-15);
    }

    #[test]
    fn non_finite_state_fails() {
        let g = Grid::new(3, 1.0).unwrap();
        let u = Trajectory::constant(3, &[f64::INFINITY]);
        let err = integrate_forward(&Linear { a: 0.0 }, None, &IntegratorChoice::Euler, &g, 0.0, &u, &[], &[0.0])
            .unwrap_err();
        assert!(matches!(err, SolverError::NumericalFailure { index: 0, .. }));
    }

    #[test]
    fn quadrature_examples() {
        let g = Grid::new(5, 2.0).unwrap();
        assert_eq!(quadrature(&g, &[1.0; 5]), 2.0);
        for n in [2, 3, 10] {
            let g = Grid::new(n, 1.0).unwrap();
            assert!((quadrature(&g, &g.times()) - 0.5).abs() < 1e-15);
        }
        let g = Grid::new(101, 1.0).unwrap();
        let sq: Vec<f64> = g.times().iter().map(|t| t * t).collect();
        assert!((quadrature(&g, &sq) - 1.0 / 3.0).abs() < 1e-4);
    }

    fn adjoint_of(pr: &impl Problem, n: usize, horizon: f64, u: &Trajectory, x0: &[f64]) -> (Trajectory, Trajectory) {
        let g = Grid::new(n, horizon).unwrap();
        let des = Setpoint::zeros(&pr.dims());
        let method = IntegratorChoice::Rk45(Rk45Tolerances { rel_tol: 1e-10, abs_tol: 1e-12, min_step: 1e-14 });
        let x = integrate_forward(pr, None, &method, &g, 0.0, u, &[], x0).unwrap();
        let mult = MultiplierState::new(&pr.dims(), n, 0.0, 1.0);
        let mut ev = Evaluator::new(pr, &des, 0.0);
        let lam = integrate_adjoint(&mut ev, None, &method, &g, &x, u, &[], &mult).unwrap();
        (x, lam)
    }

    #[test]
    fn terminal_condition_is_terminal_gradient() {
        let pr = ScalarLq { a: 0.3, b: 1.0, q: 0.0, r: 0.0, s: 1.0 };
        let u = Trajectory::constant(11, &[0.2]);
        let (x, lam) = adjoint_of(&pr, 11, 1.0, &u, &[1.0]);
        assert_eq!(lam.last()[0], x.last()[0]);
    }

    #[test]
    fn adjoint_constant_without_state_dependence() {
        let pr = ScalarLq { a: 0.0, b: 1.0, q: 0.0, r: 1.0, s: 2.0 };
        let u = Trajectory::constant(11, &[0.5]);
        let (x, lam) = adjoint_of(&pr, 11, 1.0, &u, &[1.0]);
        for r in lam.rows() {
            assert_eq!(r[0], 2.0 * x.last()[0]);
        }
    }

    #[test]
    fn lq_adjoint_matches_closed_form() {
        // ẋ = a x, l = ½ q x², V = ½ s x², u ≡ 0:
        // x(t) = x0 e^{at}, λ̇ = −q x − a λ, λ(T) = s x(T), so
        // λ(t) = e^{a(T−t)} s x(T) + q x0 e^{−at} (e^{2aT} − e^{2at}) / (2a)
        let (a, q, s, x0, tf) = (-0.7, 2.0, 3.0, 1.5, 2.0);
        let pr = ScalarLq { a, b: 1.0, q, r: 1.0, s };
        // fine grid: states are interpolated linearly inside the adjoint sweep
        let n = 2001;
        let u = Trajectory::zeros(1, n);
        let (_, lam) = adjoint_of(&pr, n, tf, &u, &[x0]);
        let g = Grid::new(n, tf).unwrap();
        let xt = x0 * (a * tf).exp();
        for i in (0..n).step_by(100) {
            let t = g.time(i);
            let exact = (a * (tf - t)).exp() * s * xt
                + q * x0 * (-a * t).exp() * ((2.0 * a * tf).exp() - (2.0 * a * t).exp()) / (2.0 * a);
            assert!((lam.row(i)[0] - exact).abs() < 1e-6, "node {i}: {} vs {exact}", lam.row(i)[0]);
        }
    }
}
