//! Augmented Lagrangian outer loop around the projected gradient method.

use serde::{Deserialize, Serialize};

use crate::auglag::{
    check_convergence, estimate_penalty_min, update_multipliers, update_penalties, ConstraintTolerances,
    ConvergenceStatus, Evaluator, MultiplierState, Residuals,
};
use crate::error::{Result, SolverError};
use crate::gradient::{augmented_cost, project, solve_inner, DecisionPoint, InnerContext, LineSearchState};
use crate::integrators::quadrature;
use crate::options::{OptionValue, SolverOptions};
use crate::problem::{validate_with, Bounds, MassMatrix, Problem, ProblemDims, ScaledProblem, Setpoint};
use crate::trajectory::{Grid, Trajectory};

/// Diagnostics of one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub inner_iterations: usize,
    pub eta: f64,
    /// `J̄` after the inner loop
    pub augmented_cost: f64,
    pub max_path_eq: f64,
    pub max_path_ineq: f64,
    pub max_terminal_eq: f64,
    pub max_terminal_ineq: f64,
    pub status: ConvergenceStatus,
}

/// Result of [`Solver::solve`], in the problem's own units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSolution {
    pub grid: Grid,
    pub x: Trajectory,
    pub u: Trajectory,
    pub p: Vec<f64>,
    pub horizon: f64,
    /// Original cost `J = V + ∫ l dt` without constraint terms.
    pub cost: f64,
    pub status: ConvergenceStatus,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub residuals: Residuals,
    pub history: Vec<OuterRecord>,
}

impl SolverSolution {
    pub fn converged(&self) -> bool {
        self.status.is_converged()
    }
}

/// Stateful solver: keeps the last iterate, multipliers, penalties, residuals
/// and line-search state to warm-start the next call.
pub struct Solver<P> {
    problem: ScaledProblem<P>,
    dims: ProblemDims,
    bounds: Bounds,
    internal_bounds: Bounds,
    mass: Option<MassMatrix>,
    opts: SolverOptions,
    tolerances: ConstraintTolerances,
    x0: Vec<f64>,
    t0: f64,
    setpoint: Setpoint,
    point: DecisionPoint,
    grid: Grid,
    mult: MultiplierState,
    prev_residuals: Option<(Grid, Residuals)>,
    line_search: LineSearchState,
    c_min_estimated: bool,
}

impl<P: Problem> Solver<P> {
    /// Validates the problem, bounds and options and sets a zero initial
    /// state, a zero setpoint and the midpoint of finite control bounds
    /// (zero otherwise) as initial guess.
    pub fn new(problem: P, bounds: Bounds, opts: SolverOptions) -> Result<Self> {
        opts.validate().map_err(|e| SolverError::InvalidInput(e.to_string()))?;
        validate_with(&problem, &bounds, opts.optim_time).into_result()?;
        let dims = problem.dims();
        let tolerances = ConstraintTolerances::from_list(&dims, &opts.al.constraints_abs_tol)?;
        let scaling = bounds.scaling.clone();
        let internal_bounds = Bounds {
            u_min: scaling.scale_u(&bounds.u_min),
            u_max: scaling.scale_u(&bounds.u_max),
            ..bounds.clone()
        };
        let problem = ScaledProblem::new(problem, scaling);
        let mass = match problem.mass_matrix() {
            Some(m) => Some(
                MassMatrix::factorize(&m, dims.nx)
                    .ok_or_else(|| SolverError::InvalidProblem("singular mass matrix".into()))?,
            ),
            None => None,
        };
        let horizon = bounds.t_max.min(1.0).max(bounds.t_min);
        let grid = Grid::new(opts.n_hor, horizon)?;
        let u0: Vec<f64> = (0..dims.nu)
            .map(|k| {
                let (lo, hi) = (internal_bounds.u_min[k], internal_bounds.u_max[k]);
                if lo.is_finite() && hi.is_finite() {
                    0.5 * (lo + hi)
                } else {
                    0.0f64.clamp(lo, hi)
                }
            })
            .collect();
        let p0: Vec<f64> = (0..dims.np).map(|k| 0.0f64.clamp(bounds.p_min[k], bounds.p_max[k])).collect();
        let mut point = DecisionPoint {
            u: Trajectory::constant(opts.n_hor, &u0),
            p: p0,
            horizon,
        };
        project(&mut point, &internal_bounds);
        let mult = MultiplierState::new(&dims, opts.n_hor, opts.al.mu_init, opts.al.c_init);
        let line_search = LineSearchState::new(&opts.line_search);
        Ok(Solver {
            problem,
            dims,
            bounds,
            internal_bounds,
            mass,
            tolerances,
            x0: vec![0.0; dims.nx],
            t0: 0.0,
            setpoint: Setpoint::zeros(&dims),
            point,
            grid,
            mult,
            prev_residuals: None,
            line_search,
            c_min_estimated: false,
            opts,
        })
    }

    pub fn problem(&self) -> &P {
        self.problem.inner()
    }

    /// Mutable access for problems that carry data, such as measurement
    /// windows. Dimensions and hooks must not change.
    pub fn problem_mut(&mut self) -> &mut P {
        self.problem.inner_mut()
    }

    pub fn dims(&self) -> &ProblemDims {
        &self.dims
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    pub fn multipliers(&self) -> &MultiplierState {
        &self.mult
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.x0
    }

    pub fn setpoint(&self) -> &Setpoint {
        &self.setpoint
    }

    pub fn time(&self) -> f64 {
        self.t0
    }

    /// Sets one option by its key; changing `Nhor` resamples the stored
    /// iterate and multipliers.
    pub fn set_option(&mut self, key: &str, value: &OptionValue) -> Result<()> {
        let mut next = self.opts.clone();
        next.set(key, value).map_err(|e| SolverError::InvalidInput(e.to_string()))?;
        next.validate().map_err(|e| SolverError::InvalidInput(e.to_string()))?;
        let tol = ConstraintTolerances::from_list(&self.dims, &next.al.constraints_abs_tol)?;
        if next.n_hor != self.opts.n_hor {
            let to = Grid::new(next.n_hor, self.grid.horizon())?;
            self.point.u = self.point.u.resample(&self.grid, &to, 0.0);
            self.mult = self.mult.resample(&self.grid, &to, 0.0);
            self.prev_residuals = None;
            self.line_search.prev = None;
            self.grid = to;
        }
        if next.line_search.init != self.opts.line_search.init {
            self.line_search = LineSearchState::new(&next.line_search);
        }
        self.tolerances = tol;
        self.opts = next;
        Ok(())
    }

    pub fn set_initial_state(&mut self, x0: &[f64]) -> Result<()> {
        self.check_len("x0", x0.len(), self.dims.nx)?;
        self.x0 = x0.to_vec();
        Ok(())
    }

    pub fn set_time(&mut self, t0: f64) {
        self.t0 = t0;
    }

    pub fn set_setpoint(&mut self, setpoint: Setpoint) -> Result<()> {
        self.check_len("x_des", setpoint.x.len(), self.dims.nx)?;
        self.check_len("u_des", setpoint.u.len(), self.dims.nu)?;
        self.setpoint = setpoint;
        Ok(())
    }

    /// Constant control guess over the whole horizon (projected).
    pub fn set_control_guess(&mut self, u: &[f64]) -> Result<()> {
        self.check_len("u_init", u.len(), self.dims.nu)?;
        let u = self.problem.scaling().scale_u(u);
        self.point.u = Trajectory::constant(self.opts.n_hor, &u);
        project(&mut self.point, &self.internal_bounds);
        Ok(())
    }

    pub fn set_param_guess(&mut self, p: &[f64]) -> Result<()> {
        self.check_len("p_init", p.len(), self.dims.np)?;
        self.point.p = p.to_vec();
        project(&mut self.point, &self.internal_bounds);
        Ok(())
    }

    /// Sets the horizon length; stored trajectories are resampled in `τ`.
    pub fn set_horizon(&mut self, horizon: f64) -> Result<()> {
        self.shift_to_horizon(0.0, horizon)
    }

    pub fn horizon(&self) -> f64 {
        self.point.horizon
    }

    /// Control guess in the problem's own units.
    pub fn control_guess(&self) -> Trajectory {
        self.unscale_u(&self.point.u)
    }

    pub fn param_guess(&self) -> &[f64] {
        &self.point.p
    }

    /// Warm-start shift by `dt`: controls, multipliers, penalties and stored
    /// residuals become functions of `τ + dt`, holding the final values.
    /// Terminal multipliers and penalties are kept.
    pub fn shift(&mut self, dt: f64) {
        let h = self.point.horizon;
        // the horizon is unchanged, so the grid cannot fail
        let _ = self.shift_to_horizon(dt, h);
    }

    /// Like [`Self::shift`], onto a grid over `horizon` (clamped to its bounds).
    pub fn shift_to_horizon(&mut self, dt: f64, horizon: f64) -> Result<()> {
        let from = self.grid;
        let h = horizon.clamp(self.bounds.t_min, self.bounds.t_max);
        let to = Grid::new(self.opts.n_hor, h)?;
        self.point.u = self.point.u.resample(&from, &to, dt);
        self.point.horizon = h;
        self.mult = self.mult.resample(&from, &to, dt);
        if let Some((pg, r)) = &self.prev_residuals {
            self.prev_residuals = Some((to, r.resample(pg, &to, dt)));
        }
        self.grid = to;
        Ok(())
    }

    /// Multipliers, penalties, stored residuals and line-search state are
    /// set back to their initial values.
    pub fn reset_multipliers(&mut self) {
        self.mult = MultiplierState::new(&self.dims, self.opts.n_hor, self.opts.al.mu_init, self.opts.al.c_init);
        self.prev_residuals = None;
        self.line_search = LineSearchState::new(&self.opts.line_search);
        self.c_min_estimated = false;
    }

    fn check_len(&self, what: &str, have: usize, need: usize) -> Result<()> {
        if have == need {
            Ok(())
        } else {
            Err(SolverError::InvalidInput(format!("{what} has length {have}, expected {need}")))
        }
    }

    fn unscale_u(&self, u: &Trajectory) -> Trajectory {
        let sc = self.problem.scaling();
        if sc.is_identity() {
            return u.clone();
        }
        let mut out = u.clone();
        for i in 0..u.len() {
            out.row_mut(i).copy_from_slice(&sc.unscale_u(u.row(i)));
        }
        out
    }

    fn unscale_x(&self, x: &Trajectory) -> Trajectory {
        let sc = self.problem.scaling();
        if sc.is_identity() {
            return x.clone();
        }
        let mut out = x.clone();
        for i in 0..x.len() {
            out.row_mut(i).copy_from_slice(&sc.unscale_x(x.row(i)));
        }
        out
    }

    /// Raises `c_min` (and all penalties) to a fraction of the ratio between
    /// the cost and the integrated squared constraint violation of the
    /// current guess. Heuristic, evaluated once per solver.
    fn estimate_c_min(&mut self, x0: &[f64]) -> Result<()> {
        let ctx = InnerContext {
            problem: &self.problem,
            mass: self.mass.as_ref(),
            bounds: &self.internal_bounds,
            setpoint: &self.setpoint,
            t0: self.t0,
            x0,
            opts: &self.opts,
        };
        let mut ev = Evaluator::new(&self.problem, &self.setpoint, self.t0);
        let (g, x) = ctx.forward(&self.point)?;
        let zero = MultiplierState::new(&self.dims, self.opts.n_hor, 0.0, 1.0);
        let res = residuals(&mut ev, &g, &x, &self.point.u, &self.point.p, &zero);
        let cost = original_cost(&mut ev, &g, &x, &self.point.u, &self.point.p)?;
        let sq = constraint_sq_integral(&g, &res);
        let al = &self.opts.al;
        let c_min = estimate_penalty_min(cost, sq, 0.1, al.c_min).min(al.c_max);
        self.opts.al.c_min = c_min;
        raise_penalties(&mut self.mult, c_min);
        self.c_min_estimated = true;
        Ok(())
    }

    /// Runs the augmented Lagrangian iterations from the stored warm start.
    pub fn solve(&mut self) -> Result<SolverSolution> {
        let x0 = self.problem.scaling().scale_x(&self.x0);
        if self.opts.al.estimate_c_min && !self.c_min_estimated && self.dims.has_constraints() {
            self.estimate_c_min(&x0)?;
        }
        let ctx = InnerContext {
            problem: &self.problem,
            mass: self.mass.as_ref(),
            bounds: &self.internal_bounds,
            setpoint: &self.setpoint,
            t0: self.t0,
            x0: &x0,
            opts: &self.opts,
        };
        let mut ev = Evaluator::new(&self.problem, &self.setpoint, self.t0);
        let prm = self.opts.al.update_params();

        let mut point = self.point.clone();
        let mut history = Vec::new();
        let mut inner_total = 0;
        let mut last = None;
        for i in 1..=self.opts.max_mult_iter {
            let inner = solve_inner(&ctx, &mut self.mult, point, &mut self.line_search)
                .map_err(|e| e.within(format_args!("outer iteration {i}")))?;
            inner_total += inner.iterations;
            let res = residuals(&mut ev, &inner.grid, &inner.x, &inner.point.u, &inner.point.p, &self.mult);
            let status = check_convergence(&res, inner.eta, &self.tolerances, self.opts.al.eps_rel_c);
            history.push(OuterRecord {
                inner_iterations: inner.iterations,
                eta: inner.eta,
                augmented_cost: *inner.cost_history.last().unwrap_or(&f64::NAN),
                max_path_eq: res.max_path_eq(),
                max_path_ineq: res.max_path_ineq(),
                max_terminal_eq: res.max_terminal_eq(),
                max_terminal_ineq: res.max_terminal_ineq(),
                status,
            });
            point = inner.point.clone();
            if !status.is_converged() {
                update_multipliers(&mut self.mult, &res, &self.tolerances, inner.eta, &prm);
                if let Some((pg, prev)) = &self.prev_residuals {
                    let prev = if *pg == inner.grid { prev.clone() } else { prev.resample(pg, &inner.grid, 0.0) };
                    update_penalties(&mut self.mult, &res, &prev, &self.tolerances, inner.eta, &prm);
                }
            }
            self.prev_residuals = Some((inner.grid, res.clone()));
            let done = status.is_converged();
            last = Some((inner, res, status));
            if done {
                break;
            }
        }
        let (inner, res, status) = last.expect("at least one outer iteration");
        self.point = point;
        self.grid = inner.grid;
        let cost = original_cost(&mut ev, &inner.grid, &inner.x, &inner.point.u, &inner.point.p)?;
        Ok(SolverSolution {
            grid: inner.grid,
            x: self.unscale_x(&inner.x),
            u: self.unscale_u(&inner.point.u),
            p: inner.point.p,
            horizon: inner.point.horizon,
            cost,
            status,
            outer_iterations: history.len(),
            inner_iterations: inner_total,
            residuals: res,
            history,
        })
    }
}

/// Constraint values `g`, `h̄` on the grid and at the end of the horizon.
pub fn residuals<P: Problem + ?Sized>(
    ev: &mut Evaluator<'_, P>,
    grid: &Grid,
    x: &Trajectory,
    u: &Trajectory,
    p: &[f64],
    mult: &MultiplierState,
) -> Residuals {
    let dims = *ev.dims();
    let mut res = Residuals::empty(&dims, grid.len());
    if dims.ng + dims.nh > 0 {
        let mut g = vec![0.0; dims.ng];
        let mut h = vec![0.0; dims.nh];
        for i in 0..grid.len() {
            ev.path_residuals(grid.time(i), x.row(i), u.row(i), p, &mult.at(i), &mut g, &mut h);
            res.g.row_mut(i).copy_from_slice(&g);
            res.hbar.row_mut(i).copy_from_slice(&h);
        }
    }
    if dims.ngt + dims.nht > 0 {
        ev.terminal_residuals(grid.horizon(), x.last(), p, &mult.terminal(), &mut res.gt, &mut res.hbar_t);
    }
    res
}

/// `J = V + ∫ l dt` without constraint terms.
pub fn original_cost<P: Problem + ?Sized>(
    ev: &mut Evaluator<'_, P>,
    grid: &Grid,
    x: &Trajectory,
    u: &Trajectory,
    p: &[f64],
) -> Result<f64> {
    let dims = *ev.dims();
    let none = MultiplierState::new(&ProblemDims { ng: 0, nh: 0, ngt: 0, nht: 0, ..dims }, grid.len(), 0.0, 1.0);
    let (problem, des, t0) = (ev.problem(), ev.setpoint(), ev.t0());
    let view = Unconstrained(problem);
    let mut plain = Evaluator::new(&view, des, t0);
    augmented_cost(&mut plain, grid, x, u, p, &none)
}

/// View of a problem with its constraints removed.
struct Unconstrained<'a, P: ?Sized>(&'a P);

impl<P: Problem + ?Sized> Problem for Unconstrained<'_, P> {
    fn dims(&self) -> ProblemDims {
        ProblemDims {
            ng: 0,
            nh: 0,
            ngt: 0,
            nht: 0,
            ..self.0.dims()
        }
    }
    fn hooks(&self) -> crate::problem::HookSet {
        self.0.hooks()
    }
    fn f(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64]) {
        self.0.f(out, t, x, u, p)
    }
    fn l(&self, t: f64, x: &[f64], u: &[f64], p: &[f64], des: &Setpoint) -> f64 {
        self.0.l(t, x, u, p, des)
    }
    fn v(&self, horizon: f64, x: &[f64], p: &[f64], des: &Setpoint) -> f64 {
        self.0.v(horizon, x, p, des)
    }
}

fn constraint_sq_integral(grid: &Grid, res: &Residuals) -> f64 {
    let samples: Vec<f64> = (0..grid.len())
        .map(|i| {
            res.g.row(i).iter().chain(res.hbar.row(i)).map(|v| v * v).sum::<f64>()
        })
        .collect();
    let terminal: f64 = res.gt.iter().chain(&res.hbar_t).map(|v| v * v).sum();
    quadrature(grid, &samples) + terminal
}

fn raise_penalties(mult: &mut MultiplierState, c_min: f64) {
    let raise = |v: &mut f64| *v = v.max(c_min);
    mult.c_g.as_mut_slice().iter_mut().for_each(raise);
    mult.c_h.as_mut_slice().iter_mut().for_each(raise);
    mult.c_gt.iter_mut().for_each(raise);
    mult.c_ht.iter_mut().for_each(raise);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::integrate_forward;
    use crate::problem::test_problems::{BallOnPlate, ScalarLq};

    #[test]
    fn unconstrained_uses_one_outer_iteration() {
        let pr = ScalarLq { a: -0.5, b: 1.0, q: 1.0, r: 0.1, s: 1.0 };
        let mut opts = SolverOptions::default();
        opts.max_mult_iter = 5;
        opts.max_grad_iter = 200;
        opts.line_search.init = 0.5;
        let mut s = Solver::new(pr.clone(), Bounds::unbounded(&pr.dims()), opts).unwrap();
        s.set_initial_state(&[1.0]).unwrap();
        s.set_horizon(1.0).unwrap();
        let sol = s.solve().unwrap();
        assert_eq!(sol.outer_iterations, 1);
        assert!(sol.converged(), "{}", sol.status);
    }

    #[test]
    fn real_time_mode_iteration_counts() {
        let pr = BallOnPlate::default();
        let dims = pr.dims();
        let bounds = Bounds::unbounded(&dims).with_controls(vec![-0.0524], vec![0.0524]);
        let mut opts = SolverOptions::default();
        opts.n_hor = 20;
        opts.max_mult_iter = 1;
        opts.max_grad_iter = 2;
        let mut s = Solver::new(pr, bounds, opts).unwrap();
        s.set_initial_state(&[0.1, 0.01]).unwrap();
        s.set_horizon(0.3).unwrap();
        let sol = s.solve().unwrap();
        assert_eq!(sol.outer_iterations, 1);
        assert!(sol.inner_iterations <= 2);
    }

    #[test]
    fn returned_states_follow_returned_controls() {
        let pr = BallOnPlate::default();
        let dims = pr.dims();
        let bounds = Bounds::unbounded(&dims).with_controls(vec![-0.0524], vec![0.0524]);
        let mut opts = SolverOptions::default();
        opts.n_hor = 20;
        opts.max_mult_iter = 3;
        let mut s = Solver::new(pr.clone(), bounds, opts.clone()).unwrap();
        s.set_initial_state(&[0.1, 0.01]).unwrap();
        s.set_horizon(0.3).unwrap();
        s.set_setpoint(Setpoint::new(vec![-0.2, 0.0], vec![0.0])).unwrap();
        for _ in 0..3 {
            let sol = s.solve().unwrap();
            let x = integrate_forward(&pr, None, &opts.integrator_choice(), &sol.grid, 0.0, &sol.u, &sol.p, &[0.1, 0.01])
                .unwrap();
            assert_eq!(x, sol.x);
            assert!(s.multipliers().within_bounds(opts.al.c_min, opts.al.c_max, opts.al.mu_max));
        }
    }

    #[test]
    fn shift_holds_the_tail() {
        let pr = ScalarLq { a: 0.0, b: 1.0, q: 0.0, r: 1.0, s: 0.0 };
        let mut opts = SolverOptions::default();
        opts.n_hor = 5;
        let mut s = Solver::new(pr.clone(), Bounds::unbounded(&pr.dims()), opts).unwrap();
        s.set_horizon(1.0).unwrap();
        s.point.u = Trajectory::from_fn(s.grid(), 1, |t, o| o[0] = t);
        s.shift(0.25);
        assert_eq!(s.control_guess().component(0), vec![0.25, 0.5, 0.75, 1.0, 1.0]);
    }
}
