//! Projected gradient iterations over `(u, p, T)` for fixed multipliers and
//! penalties.

use serde::{Deserialize, Serialize};

use crate::auglag::{Evaluator, MultiplierState};
use crate::error::{ensure_finite, Result};
use crate::integrators::{integrate_adjoint, integrate_forward, quadrature, IntegratorChoice};
use crate::options::{LineSearchConfig, LineSearchKind, SolverOptions};
use crate::problem::{Bounds, MassMatrix, Problem};
use crate::trajectory::{Grid, Trajectory};

/// Optimization variables of one iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPoint {
    pub u: Trajectory,
    pub p: Vec<f64>,
    pub horizon: f64,
}

/// Gradients with respect to `u` (per node), `p` and `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBundle {
    pub d_u: Trajectory,
    /// empty unless parameters are optimized
    pub d_p: Vec<f64>,
    /// `None` unless the horizon length is optimized
    pub d_t: Option<f64>,
}

/// Everything the inner loop needs besides the iterate and the multipliers.
pub struct InnerContext<'a, P: ?Sized> {
    pub problem: &'a P,
    pub mass: Option<&'a MassMatrix>,
    /// Bounds in the problem's own (possibly scaled) coordinates.
    pub bounds: &'a Bounds,
    pub setpoint: &'a crate::problem::Setpoint,
    pub t0: f64,
    pub x0: &'a [f64],
    pub opts: &'a SolverOptions,
}

impl<P: Problem + ?Sized> InnerContext<'_, P> {
    fn integrator(&self) -> IntegratorChoice {
        self.opts.integrator_choice()
    }

    fn grid(&self, horizon: f64) -> Result<Grid> {
        Grid::new(self.opts.n_hor, horizon)
    }

    pub fn forward(&self, point: &DecisionPoint) -> Result<(Grid, Trajectory)> {
        let grid = self.grid(point.horizon)?;
        let x = integrate_forward(
            self.problem,
            self.mass,
            &self.integrator(),
            &grid,
            self.t0,
            &point.u,
            &point.p,
            self.x0,
        )?;
        Ok((grid, x))
    }
}

/// `H = l̄ + λᵀf` at a single instant.
#[allow(clippy::too_many_arguments)]
pub fn eval_hamiltonian<P: Problem + ?Sized>(
    ev: &mut Evaluator<'_, P>,
    tau: f64,
    x: &[f64],
    u: &[f64],
    p: &[f64],
    lam: &[f64],
    mult: &MultiplierState,
    node: usize,
) -> Result<f64> {
    ev.hamiltonian(tau, x, u, p, lam, &mult.at(node))
}

/// `J̄ = V̄(x(T)) + ∫ l̄ dt`, integrated by the trapezoid rule.
pub fn augmented_cost<P: Problem + ?Sized>(
    ev: &mut Evaluator<'_, P>,
    grid: &Grid,
    x: &Trajectory,
    u: &Trajectory,
    p: &[f64],
    mult: &MultiplierState,
) -> Result<f64> {
    let samples: Vec<f64> = (0..grid.len())
        .map(|i| ev.lbar(grid.time(i), x.row(i), u.row(i), p, &mult.at(i)))
        .collect();
    let j = quadrature(grid, &samples) + ev.vbar(grid.horizon(), x.last(), p, &mult.terminal());
    ensure_finite(&[j], "augmented cost")?;
    Ok(j)
}

/// `d_u = H_u` nodewise, `d_p = V̄_p + ∫ H_p dt`, `d_T = V̄_T + H(T)`.
///
/// `V̄_p` and `V̄_T` include the terminal constraint terms
/// `(∂g_T/∂·)ᵀ(μ_gT + c_gT g_T)` and `(∂h_T/∂·)ᵀ max{μ_hT + c_hT h_T, 0}`.
#[allow(clippy::too_many_arguments)]
pub fn compute_gradients<P: Problem + ?Sized>(
    ev: &mut Evaluator<'_, P>,
    grid: &Grid,
    x: &Trajectory,
    lam: &Trajectory,
    u: &Trajectory,
    p: &[f64],
    mult: &MultiplierState,
    optim_param: bool,
    optim_time: bool,
) -> Result<GradientBundle> {
    let n = grid.len();
    let nu = u.dim();
    let np = p.len();
    let mut d_u = Trajectory::zeros(nu, n);
    for i in 0..n {
        ev.h_u(d_u.row_mut(i), grid.time(i), x.row(i), u.row(i), p, lam.row(i), &mult.at(i));
    }
    ensure_finite(d_u.as_slice(), "control gradient")?;

    let d_p = if optim_param && np > 0 {
        let mut hp = Trajectory::zeros(np, n);
        for i in 0..n {
            ev.h_p(hp.row_mut(i), grid.time(i), x.row(i), u.row(i), p, lam.row(i), &mult.at(i));
        }
        let mut d = vec![0.0; np];
        ev.vbar_p(&mut d, grid.horizon(), x.last(), p, &mult.terminal());
        for (k, dk) in d.iter_mut().enumerate() {
            *dk += quadrature(grid, &hp.component(k));
        }
        ensure_finite(&d, "parameter gradient")?;
        d
    } else {
        Vec::new()
    };

    let d_t = if optim_time {
        let last = n - 1;
        let h_end = ev.hamiltonian(grid.horizon(), x.row(last), u.row(last), p, lam.row(last), &mult.at(last))?;
        let v_t = ev.vbar_t(grid.horizon(), x.last(), p, &mult.terminal());
        let d = v_t + h_end;
        ensure_finite(&[d], "end time gradient")?;
        Some(d)
    } else {
        None
    };

    Ok(GradientBundle { d_u, d_p, d_t })
}

/// Componentwise clamp of `u` at every node, of `p` and of `T`.
pub fn project(point: &mut DecisionPoint, bounds: &Bounds) {
    for i in 0..point.u.len() {
        for (k, v) in point.u.row_mut(i).iter_mut().enumerate() {
            *v = clamp(*v, bounds.u_min[k], bounds.u_max[k]);
        }
    }
    for (k, v) in point.p.iter_mut().enumerate() {
        *v = clamp(*v, bounds.p_min[k], bounds.p_max[k]);
    }
    point.horizon = clamp(point.horizon, bounds.t_min, bounds.t_max);
}

fn clamp(v: f64, lo: f64, hi: f64) -> f64 {
    if v <= lo {
        lo
    } else if v >= hi {
        hi
    } else {
        v
    }
}

/// Maximum relative change of `u` (trapezoid `L2` norm on `grid`), `p` and `T`.
///
/// Trajectories are compared node by node, also when the horizon changed.
/// Terms of variables that are not optimized are omitted.
pub fn relative_change(
    prev: &DecisionPoint,
    curr: &DecisionPoint,
    grid: &Grid,
    optim_param: bool,
    optim_time: bool,
) -> f64 {
    let ratio = |num: f64, den: f64| {
        if den > 0.0 {
            num / den
        } else if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    let mut eta: f64 = 0.0;
    if curr.u.dim() > 0 {
        let w = grid.trapezoid_weights();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..curr.u.len() {
            for (a, b) in curr.u.row(i).iter().zip(prev.u.row(i)) {
                num += w[i] * (a - b) * (a - b);
                den += w[i] * a * a;
            }
        }
        eta = eta.max(ratio(num.sqrt(), den.sqrt()));
    }
    if optim_param && !curr.p.is_empty() {
        let num: f64 = curr.p.iter().zip(&prev.p).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = curr.p.iter().map(|a| a * a).sum();
        eta = eta.max(ratio(num.sqrt(), den.sqrt()));
    }
    if optim_time {
        eta = eta.max(ratio((curr.horizon - prev.horizon).abs(), curr.horizon.abs()));
    }
    eta
}

/// Minimizer over `[α₁, α₃]` of the parabola through three samples; the best
/// sample when the fit is not strictly convex.
pub fn adaptive_fit(alpha: [f64; 3], cost: [f64; 3]) -> f64 {
    let [a1, a2, a3] = alpha;
    let [j1, j2, j3] = cost;
    let s12 = (j2 - j1) / (a2 - a1);
    let s23 = (j3 - j2) / (a3 - a2);
    let p2 = (s23 - s12) / (a3 - a1);
    let p1 = s12 - p2 * (a1 + a2);
    if p2 > 0.0 && p2.is_finite() && p1.is_finite() {
        (-p1 / (2.0 * p2)).clamp(a1, a3)
    } else {
        best_sample(alpha, cost)
    }
}

fn best_sample(alpha: [f64; 3], cost: [f64; 3]) -> f64 {
    let mut best = 0;
    for k in 1..3 {
        // NaN costs never win
        if cost[k] < cost[best] || cost[best].is_nan() {
            best = k;
        }
    }
    alpha[best]
}

/// Persistent line-search state: the adaptive interval and the previous
/// iterate for the explicit variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSearchState {
    pub alpha_mid: f64,
    pub prev: Option<(DecisionPoint, GradientBundle)>,
}

impl LineSearchState {
    pub fn new(cfg: &LineSearchConfig) -> Self {
        LineSearchState {
            alpha_mid: cfg.init,
            prev: None,
        }
    }

    /// Current adaptive sample points `α₁ < α₂ < α₃`.
    pub fn interval(&self, cfg: &LineSearchConfig) -> [f64; 3] {
        let m = self.alpha_mid;
        [m * (1.0 - cfg.interval_factor), m, m * (1.0 + cfg.interval_factor)]
    }

    /// Moves the interval by the adaptation factor when `alpha` lies at a border.
    pub fn adapt(&mut self, alpha: f64, cfg: &LineSearchConfig) {
        let [a1, _, a3] = self.interval(cfg);
        let tol = cfg.interval_tol * (a3 - a1);
        if alpha >= a3 - tol && a3 * cfg.adapt_factor <= cfg.max {
            self.alpha_mid *= cfg.adapt_factor;
        } else if alpha <= a1 + tol && a1 / cfg.adapt_factor >= cfg.min {
            self.alpha_mid /= cfg.adapt_factor;
        }
    }
}

/// Step size from the secant condition of two consecutive iterates.
///
/// `Explicit1` evaluates
/// `(⟨Δu,Δd_u⟩ + γ_p⟨Δp,Δd_p⟩ + γ_T ΔT Δd_T) / (⟨Δd_u,Δd_u⟩ + γ_p²⟨Δd_p,Δd_p⟩ + γ_T² Δd_T²)`,
/// `Explicit2` evaluates
/// `(⟨Δu,Δu⟩ + γ_p⟨Δp,Δp⟩ + γ_T ΔT²) / (⟨Δu,Δd_u⟩ + γ_p²⟨Δp,Δd_p⟩ + γ_T² ΔT Δd_T)`,
/// with `L2` products by trapezoid quadrature on `grid`. The result is clamped
/// to `[α_min, α_max]`; non-positive or non-finite values fall back to `α₀`.
pub fn line_search_explicit(
    prev: (&DecisionPoint, &GradientBundle),
    curr: (&DecisionPoint, &GradientBundle),
    grid: &Grid,
    cfg: &LineSearchConfig,
    kind: LineSearchKind,
) -> f64 {
    let (p0, g0) = prev;
    let (p1, g1) = curr;
    let w = grid.trapezoid_weights();
    let (mut uu, mut ud, mut dd) = (0.0, 0.0, 0.0);
    for i in 0..p1.u.len() {
        for k in 0..p1.u.dim() {
            let du = p1.u.row(i)[k] - p0.u.row(i)[k];
            let dg = g1.d_u.row(i)[k] - g0.d_u.row(i)[k];
            uu += w[i] * du * du;
            ud += w[i] * du * dg;
            dd += w[i] * dg * dg;
        }
    }
    let (gp, gt) = (cfg.gamma_p, cfg.gamma_t);
    let (mut pp, mut pd, mut qq) = (0.0, 0.0, 0.0);
    if !g1.d_p.is_empty() && g0.d_p.len() == g1.d_p.len() {
        for k in 0..g1.d_p.len() {
            let dp = p1.p[k] - p0.p[k];
            let dg = g1.d_p[k] - g0.d_p[k];
            pp += dp * dp;
            pd += dp * dg;
            qq += dg * dg;
        }
    }
    let (mut tt, mut td, mut ss) = (0.0, 0.0, 0.0);
    if let (Some(a), Some(b)) = (g0.d_t, g1.d_t) {
        let dt = p1.horizon - p0.horizon;
        let dg = b - a;
        tt = dt * dt;
        td = dt * dg;
        ss = dg * dg;
    }
    let alpha = match kind {
        LineSearchKind::Explicit2 => (uu + gp * pp + gt * tt) / (ud + gp * gp * pd + gt * gt * td),
        _ => (ud + gp * pd + gt * td) / (dd + gp * gp * qq + gt * gt * ss),
    };
    if alpha.is_finite() && alpha > 0.0 {
        alpha.clamp(cfg.min, cfg.max)
    } else {
        cfg.init
    }
}

/// Result of the inner minimization.
#[derive(Debug, Clone)]
pub struct InnerResult {
    pub point: DecisionPoint,
    pub grid: Grid,
    pub x: Trajectory,
    pub eta: f64,
    pub iterations: usize,
    /// `J̄` of the initial iterate followed by `J̄` after every iteration.
    pub cost_history: Vec<f64>,
}

/// Candidate produced by a projected step.
struct Trial {
    point: DecisionPoint,
    mult: Option<MultiplierState>,
    grid: Grid,
    x: Trajectory,
    cost: f64,
}

fn step<P: Problem + ?Sized>(
    ctx: &InnerContext<'_, P>,
    ev: &mut Evaluator<'_, P>,
    point: &DecisionPoint,
    grid: &Grid,
    grads: &GradientBundle,
    mult: &MultiplierState,
    alpha: f64,
) -> Result<Trial> {
    let cfg = &ctx.opts.line_search;
    let mut next = point.clone();
    for (v, d) in next.u.as_mut_slice().iter_mut().zip(grads.d_u.as_slice()) {
        *v -= alpha * d;
    }
    for (v, d) in next.p.iter_mut().zip(&grads.d_p) {
        *v -= cfg.gamma_p * alpha * d;
    }
    if let Some(d) = grads.d_t {
        next.horizon -= cfg.gamma_t * alpha * d;
    }
    project(&mut next, ctx.bounds);
    let mut new_mult = None;
    if next.horizon != point.horizon {
        // u and the multipliers are functions of τ on the new grid
        let g_new = grid.with_horizon(next.horizon)?;
        next.u = next.u.resample(grid, &g_new, 0.0);
        new_mult = Some(mult.resample(grid, &g_new, 0.0));
    }
    let (g, x) = ctx.forward(&next)?;
    let m = new_mult.as_ref().unwrap_or(mult);
    let cost = augmented_cost(ev, &g, &x, &next.u, &next.p, m)?;
    Ok(Trial {
        point: next,
        mult: new_mult,
        grid: g,
        x,
        cost,
    })
}

/// Number of interval reductions tried when no sampled step decreases `J̄`.
const MAX_SHRINK: usize = 12;

#[allow(clippy::too_many_arguments)]
fn adaptive_search<P: Problem + ?Sized>(
    ctx: &InnerContext<'_, P>,
    ev: &mut Evaluator<'_, P>,
    point: &DecisionPoint,
    grid: &Grid,
    grads: &GradientBundle,
    mult: &MultiplierState,
    state: &mut LineSearchState,
    current_cost: f64,
) -> Result<Option<Trial>> {
    let cfg = &ctx.opts.line_search;
    let accept = |c: f64| c <= current_cost + 1e-12 * (1.0 + current_cost.abs());
    for _ in 0..=MAX_SHRINK {
        let alphas = state.interval(cfg);
        let mut trials = Vec::with_capacity(3);
        for &a in &alphas {
            trials.push(step(ctx, ev, point, grid, grads, mult, a)?);
        }
        let costs = [trials[0].cost, trials[1].cost, trials[2].cost];
        let alpha = adaptive_fit(alphas, costs);
        state.adapt(alpha, cfg);
        let chosen = match alphas.iter().position(|&a| a == alpha) {
            Some(k) => trials.swap_remove(k),
            None => step(ctx, ev, point, grid, grads, mult, alpha)?,
        };
        if accept(chosen.cost) {
            return Ok(Some(chosen));
        }
        // the fit overshot: fall back to the best sample that decreases J̄
        let best = (0..trials.len()).min_by(|&a, &b| trials[a].cost.total_cmp(&trials[b].cost));
        if let Some(k) = best.filter(|&k| accept(trials[k].cost)) {
            return Ok(Some(trials.swap_remove(k)));
        }
        if state.alpha_mid / cfg.adapt_factor < cfg.min {
            break;
        }
        state.alpha_mid /= cfg.adapt_factor;
    }
    Ok(None)
}

/// Projected gradient iterations starting from `init` (projected on entry).
///
/// Each iteration integrates the adjoint, evaluates the gradients, selects a
/// step size, applies the projected update and integrates the states. The
/// loop stops when `η ≤ ε_rel,c` or after `j_max` iterations. When the
/// horizon length changes, `u` and `mult` are resampled onto the new grid.
pub fn solve_inner<P: Problem + ?Sized>(
    ctx: &InnerContext<'_, P>,
    mult: &mut MultiplierState,
    init: DecisionPoint,
    state: &mut LineSearchState,
) -> Result<InnerResult> {
    let opts = ctx.opts;
    let mut ev = Evaluator::new(ctx.problem, ctx.setpoint, ctx.t0);
    let mut point = init;
    project(&mut point, ctx.bounds);
    let (mut grid, mut x) = ctx.forward(&point)?;
    let mut cost = augmented_cost(&mut ev, &grid, &x, &point.u, &point.p, mult)?;
    let mut history = vec![cost];
    let mut eta = f64::INFINITY;
    let mut iterations = 0;
    let integrator = ctx.integrator();

    for j in 1..=opts.max_grad_iter {
        iterations = j;
        let lam = integrate_adjoint(&mut ev, ctx.mass, &integrator, &grid, &x, &point.u, &point.p, mult)
            .map_err(|e| e.within(format_args!("inner iteration {j}")))?;
        let grads = compute_gradients(
            &mut ev,
            &grid,
            &x,
            &lam,
            &point.u,
            &point.p,
            mult,
            opts.optim_param,
            opts.optim_time,
        )?;

        let trial = match opts.line_search.kind {
            LineSearchKind::Adaptive => {
                adaptive_search(ctx, &mut ev, &point, &grid, &grads, mult, state, cost)?
            }
            kind => {
                let alpha = match &state.prev {
                    Some((pp, pg)) if pp.u.len() == point.u.len() => {
                        line_search_explicit((pp, pg), (&point, &grads), &grid, &opts.line_search, kind)
                    }
                    _ => opts.line_search.init,
                };
                state.prev = Some((point.clone(), grads.clone()));
                Some(step(ctx, &mut ev, &point, &grid, &grads, mult, alpha)?)
            }
        };

        let Some(trial) = trial else {
            // no decrease along the projected gradient path
            eta = 0.0;
            history.push(cost);
            break;
        };
        eta = relative_change(&point, &trial.point, &trial.grid, opts.optim_param, opts.optim_time);
        point = trial.point;
        grid = trial.grid;
        x = trial.x;
        cost = trial.cost;
        if let Some(m) = trial.mult {
            *mult = m;
        }
        history.push(cost);
        if eta <= opts.al.eps_rel_c {
            break;
        }
    }

    Ok(InnerResult {
        point,
        grid,
        x,
        eta,
        iterations,
        cost_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::test_problems::{BallOnPlate, ScalarLq};
    use crate::problem::{ProblemDims, Setpoint};
    use proptest::prelude::*;

    #[test]
    fn adaptive_fit_examples() {
        assert_eq!(adaptive_fit([1.0, 2.0, 3.0], [2.0, 1.0, 2.0]), 2.0);
        assert_eq!(adaptive_fit([1.0, 2.0, 3.0], [1.0, 2.0, 4.0]), 1.0);
        assert_eq!(adaptive_fit([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]), 3.0);
    }

    #[test]
    fn projection_examples() {
        let dims = ProblemDims::new(2, 1);
        let bounds = Bounds::unbounded(&dims).with_controls(vec![-0.0524], vec![0.0524]);
        let mut pt = DecisionPoint { u: Trajectory::constant(3, &[0.1]), p: vec![], horizon: 0.3 };
        project(&mut pt, &bounds);
        assert!(pt.u.rows().all(|r| r[0] == 0.0524));
        let mut inner = DecisionPoint { u: Trajectory::constant(3, &[0.01]), p: vec![], horizon: 0.3 };
        let before = inner.clone();
        project(&mut inner, &bounds);
        assert_eq!(inner, before);
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(
            us in prop::collection::vec(-10.0f64..10.0, 8),
            p in -5.0f64..5.0,
            t in -1.0f64..20.0,
        ) {
            let dims = ProblemDims::new(1, 2).with_params(1);
            let bounds = Bounds::unbounded(&dims)
                .with_controls(vec![-1.0, 0.0], vec![1.0, 2.0])
                .with_params(vec![-0.5], vec![0.5])
                .with_horizon(0.1, 10.0);
            let mut pt = DecisionPoint { u: Trajectory::from_flat(2, us), p: vec![p], horizon: t };
            project(&mut pt, &bounds);
            let once = pt.clone();
            project(&mut pt, &bounds);
            prop_assert_eq!(&pt, &once);
            for r in once.u.rows() {
                prop_assert!((-1.0..=1.0).contains(&r[0]) && (0.0..=2.0).contains(&r[1]));
            }
        }

        #[test]
        fn eta_is_scale_invariant(
            a in prop::collection::vec(-5.0f64..5.0, 6),
            b in prop::collection::vec(-5.0f64..5.0, 6),
            s in 1e-3f64..1e3,
        ) {
            let g = Grid::new(6, 1.0).unwrap();
            let pt = |v: &Vec<f64>, k: f64| DecisionPoint {
                u: Trajectory::from_flat(1, v.iter().map(|x| x * k).collect()),
                p: vec![],
                horizon: 1.0,
            };
            let e1 = relative_change(&pt(&a, 1.0), &pt(&b, 1.0), &g, false, false);
            let e2 = relative_change(&pt(&a, s), &pt(&b, s), &g, false, false);
            prop_assert!((e1 - e2).abs() <= 1e-12 * e1.max(1.0) || (e1.is_infinite() && e2.is_infinite()));
        }
    }

    proptest! {
        #[test]
        fn explicit_variants_agree_on_quadratics(
            a in 0.05f64..50.0,
            u0 in prop::collection::vec(-3.0f64..3.0, 7),
            u1 in prop::collection::vec(-3.0f64..3.0, 7),
        ) {
            // J = ½a‖u‖² has d_u = a·u, so both secant formulas give 1/a
            prop_assume!(u0.iter().zip(&u1).any(|(x, y)| (x - y).abs() > 1e-3));
            let g = Grid::new(7, 2.0).unwrap();
            let mut cfg = LineSearchConfig::default();
            cfg.max = 1e3;
            let mk = |v: &Vec<f64>| {
                let u = Trajectory::from_flat(1, v.clone());
                let d = Trajectory::from_flat(1, v.iter().map(|x| a * x).collect());
                (DecisionPoint { u, p: vec![], horizon: 2.0 }, GradientBundle { d_u: d, d_p: vec![], d_t: None })
            };
            let (p0, g0) = mk(&u0);
            let (p1, g1) = mk(&u1);
            let a1 = line_search_explicit((&p0, &g0), (&p1, &g1), &g, &cfg, LineSearchKind::Explicit1);
            let a2 = line_search_explicit((&p0, &g0), (&p1, &g1), &g, &cfg, LineSearchKind::Explicit2);
            prop_assert!((a1 - 1.0 / a).abs() <= 1e-9 / a);
            prop_assert!((a2 - 1.0 / a).abs() <= 1e-9 / a);
        }
    }

    #[test]
    fn eta_examples() {
        let g = Grid::new(4, 1.0).unwrap();
        let pt = |v: f64| DecisionPoint { u: Trajectory::constant(4, &[v]), p: vec![], horizon: 1.0 };
        assert_eq!(relative_change(&pt(1.0), &pt(1.0), &g, false, false), 0.0);
        let eta = relative_change(&pt(1.0), &pt(1.1), &g, false, false);
        assert!((eta - 0.1 / 1.1).abs() < 1e-14);
        assert_eq!(relative_change(&pt(1.0), &pt(0.0), &g, false, false), f64::INFINITY);
    }

    fn bundle(d_u: f64, n: usize) -> GradientBundle {
        GradientBundle { d_u: Trajectory::constant(n, &[d_u]), d_p: vec![], d_t: None }
    }

    #[test]
    fn explicit_examples() {
        let g = Grid::new(5, 1.0).unwrap();
        let cfg = LineSearchConfig::default();
        let pt = |v: f64| DecisionPoint { u: Trajectory::constant(5, &[v]), p: vec![], horizon: 1.0 };
        let a = line_search_explicit(
            (&pt(0.0), &bundle(0.0, 5)),
            (&pt(1.0), &bundle(2.0, 5)),
            &g,
            &cfg,
            LineSearchKind::Explicit1,
        );
        assert!((a - 0.5).abs() < 1e-15);
        let a = line_search_explicit(
            (&pt(0.0), &bundle(1.0, 5)),
            (&pt(1.0), &bundle(1.0, 5)),
            &g,
            &cfg,
            LineSearchKind::Explicit1,
        );
        assert_eq!(a, cfg.init);
    }

    fn lq_ctx<'a>(pr: &'a ScalarLq, bounds: &'a Bounds, des: &'a Setpoint, opts: &'a SolverOptions) -> InnerContext<'a, ScalarLq> {
        InnerContext { problem: pr, mass: None, bounds, setpoint: des, t0: 0.0, x0: &[1.0], opts }
    }

    #[test]
    fn lq_gradient_matches_formula() {
        let pr = ScalarLq { a: -0.5, b: 2.0, q: 1.0, r: 0.3, s: 1.0 };
        let dims = pr.dims();
        let bounds = Bounds::unbounded(&dims);
        let des = Setpoint::zeros(&dims);
        let mut opts = SolverOptions::default();
        opts.n_hor = 11;
        let ctx = lq_ctx(&pr, &bounds, &des, &opts);
        let point = DecisionPoint {
            u: Trajectory::from_fn(&Grid::new(11, 1.0).unwrap(), 1, |t, o| o[0] = t - 0.5),
            p: vec![],
            horizon: 1.0,
        };
        let (grid, x) = ctx.forward(&point).unwrap();
        let mult = MultiplierState::new(&dims, 11, 0.0, 1.0);
        let mut ev = Evaluator::new(&pr, &des, 0.0);
        let lam = integrate_adjoint(&mut ev, None, &IntegratorChoice::Heun, &grid, &x, &point.u, &[], &mult).unwrap();
        let gb = compute_gradients(&mut ev, &grid, &x, &lam, &point.u, &[], &mult, false, false).unwrap();
        for i in 0..11 {
            let expected = pr.r * point.u.row(i)[0] + pr.b * lam.row(i)[0];
            assert!((gb.d_u.row(i)[0] - expected).abs() < 1e-14);
        }
        assert!(gb.d_p.is_empty() && gb.d_t.is_none());
    }

    #[test]
    fn stationary_control_has_zero_gradient() {
        // λ ≡ 0 (V = 0, q = 0) and l independent of u (r = 0)
        let pr = ScalarLq { a: 0.4, b: 1.0, q: 0.0, r: 0.0, s: 0.0 };
        let dims = pr.dims();
        let des = Setpoint::zeros(&dims);
        let grid = Grid::new(6, 1.0).unwrap();
        let u = Trajectory::constant(6, &[0.3]);
        let x = integrate_forward(&pr, None, &IntegratorChoice::Heun, &grid, 0.0, &u, &[], &[1.0]).unwrap();
        let mult = MultiplierState::new(&dims, 6, 0.0, 1.0);
        let mut ev = Evaluator::new(&pr, &des, 0.0);
        let lam = integrate_adjoint(&mut ev, None, &IntegratorChoice::Heun, &grid, &x, &u, &[], &mult).unwrap();
        let gb = compute_gradients(&mut ev, &grid, &x, &lam, &u, &[], &mult, false, false).unwrap();
        assert!(gb.d_u.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_iteration_cap() {
        let pr = ScalarLq { a: -0.5, b: 1.0, q: 1.0, r: 0.1, s: 1.0 };
        let dims = pr.dims();
        let bounds = Bounds::unbounded(&dims);
        let des = Setpoint::zeros(&dims);
        let mut opts = SolverOptions::default();
        opts.n_hor = 21;
        opts.max_grad_iter = 1;
        opts.line_search.init = 0.1;
        let ctx = lq_ctx(&pr, &bounds, &des, &opts);
        let mut mult = MultiplierState::new(&dims, 21, 0.0, 1.0);
        let mut state = LineSearchState::new(&opts.line_search);
        let init = DecisionPoint { u: Trajectory::zeros(1, 21), p: vec![], horizon: 1.0 };
        let res = solve_inner(&ctx, &mut mult, init, &mut state).unwrap();
        assert_eq!(res.iterations, 1);
        assert_eq!(res.cost_history.len(), 2);
        assert!(res.eta.is_finite() && res.eta > 0.0);
    }

    #[test]
    fn adaptive_descent_on_constrained_ball_on_plate() {
        let pr = BallOnPlate::default();
        let dims = pr.dims();
        let bounds = Bounds::unbounded(&dims).with_controls(vec![-0.0524], vec![0.0524]);
        let des = Setpoint::new(vec![-0.2, 0.0], vec![0.0]);
        let mut opts = SolverOptions::default();
        opts.n_hor = 20;
        opts.max_grad_iter = 40;
        opts.al.eps_rel_c = 1e-12;
        opts.al.eps_rel_u = 1e-12;
        let ctx = InnerContext { problem: &pr, mass: None, bounds: &bounds, setpoint: &des, t0: 0.0, x0: &[0.1, 0.01], opts: &opts };
        let mut mult = MultiplierState::new(&dims, 20, 0.0, 10.0);
        let mut state = LineSearchState::new(&opts.line_search);
        let init = DecisionPoint { u: Trajectory::zeros(1, 20), p: vec![], horizon: 0.3 };
        let res = solve_inner(&ctx, &mut mult, init, &mut state).unwrap();
        for w in res.cost_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * (1.0 + w[0].abs()), "{:?}", res.cost_history);
        }
        assert!(res.cost_history.last() < res.cost_history.first());
        assert!(res.point.u.rows().all(|r| r[0].abs() <= 0.0524));
    }
}
