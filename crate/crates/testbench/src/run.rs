//! Closed-loop simulation of MPC scenarios and one-shot OCP solves.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use pgmpc::mpc::{MheConfig, MheEstimator, MpcConfig, MpcController, MpcStep, Output};
use pgmpc::options::{OptionError, SolverOptions};
use pgmpc::problem::{Bounds, Problem, ProblemDims, Setpoint};
use pgmpc::solver::{Solver, SolverSolution};
use pgmpc::SolverError;

use crate::log::{RunMetrics, RunOutput, TrajectoryLog};
use crate::plant::Plant;
use crate::scenario::{Scenario, ScenarioKind};

/// Inequalities within this distance of zero count as active.
pub const ACTIVE_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    /// The solver or plant failed; `partial` holds everything logged so far.
    #[error("numerical failure: {error}")]
    Numerical { error: SolverError, partial: Box<RunOutput> },
}

impl From<OptionError> for RunError {
    fn from(e: OptionError) -> Self {
        RunError::Config(e.to_string())
    }
}

impl RunError {
    pub fn partial(&self) -> Option<&RunOutput> {
        match self {
            RunError::Numerical { partial, .. } => Some(partial),
            RunError::Config(_) => None,
        }
    }
}

fn config_err(e: SolverError) -> RunError {
    RunError::Config(e.to_string())
}

/// `(max(h⁺, |g|), max h)` at one point; `max h` is `−∞` without inequalities.
pub fn path_measures<P: Problem + ?Sized>(pr: &P, t: f64, x: &[f64], u: &[f64]) -> (f64, f64) {
    let d = pr.dims();
    let mut viol: f64 = 0.0;
    let mut hmax = f64::NEG_INFINITY;
    if d.ng > 0 {
        let mut g = vec![0.0; d.ng];
        pr.g(&mut g, t, x, u, &[]);
        viol = g.iter().fold(viol, |m, v| m.max(v.abs()));
    }
    if d.nh > 0 {
        let mut h = vec![0.0; d.nh];
        pr.h(&mut h, t, x, u, &[]);
        hmax = h.iter().copied().fold(hmax, f64::max);
        viol = viol.max(hmax);
    }
    (viol, hmax)
}

/// Accumulates log rows and metrics during a closed-loop run.
struct Recorder<'a, P> {
    model: &'a P,
    des: Setpoint,
    bounds: Bounds,
    dims: ProblemDims,
    log: TrajectoryLog,
    metrics: RunMetrics,
    log_timing: bool,
    step_times: Vec<f64>,
    /// last applied control and its diagnostics
    u: Vec<f64>,
    terminal: f64,
    horizon: f64,
}

impl<'a, P: Problem> Recorder<'a, P> {
    fn new(model: &'a P, sc: &Scenario, bounds: &Bounds, extra: &[&str]) -> Self {
        let dims = model.dims();
        let mut log = TrajectoryLog::new(dims.nx, dims.nu, extra);
        log.comments.push(format!("scenario={}", sc.name));
        log.comments.push(format!("seed={}", sc.seed));
        Recorder {
            model,
            des: Setpoint::new(sc.x_des.clone(), sc.u_des.clone()),
            bounds: bounds.clone(),
            dims,
            log,
            metrics: RunMetrics {
                scenario: sc.name.clone(),
                seed: sc.seed,
                ..RunMetrics::default()
            },
            log_timing: sc.log_timing,
            step_times: Vec::new(),
            u: sc.u_des.clone(),
            terminal: 0.0,
            horizon: sc.horizon,
        }
    }

    fn record_step(&mut self, step: &MpcStep, seconds: f64) {
        self.u = step.u.clone();
        self.terminal = step.max_terminal_violation;
        self.horizon = step.horizon;
        self.step_times.push(seconds);
        self.metrics.steps += 1;
        self.metrics.outer_iterations += step.outer_iterations;
        self.metrics.inner_iterations += step.inner_iterations;
        if step.status.is_converged() {
            self.metrics.converged_steps += 1;
        }
        if self.u_at_bound() {
            self.metrics.constraints_active = true;
        }
    }

    fn u_at_bound(&self) -> bool {
        self.u.iter().enumerate().any(|(i, &v)| {
            let (lo, hi) = (self.bounds.u_min[i], self.bounds.u_max[i]);
            let tol = 1e-6 * if (hi - lo).is_finite() { hi - lo } else { 1.0 };
            v <= lo + tol || v >= hi - tol
        })
    }

    /// Logs the state `x` at `t` under the current control.
    fn row(&mut self, t: f64, x: &[f64], step_time: f64, extra: &[f64]) {
        let (viol, hmax) = path_measures(self.model, t, x, &self.u);
        self.metrics.max_constraint_violation = self.metrics.max_constraint_violation.max(viol);
        if hmax >= -ACTIVE_TOL || self.dims.ng + self.dims.ngt > 0 {
            self.metrics.constraints_active = true;
        }
        let mut row = Vec::with_capacity(self.log.header.len());
        row.push(t);
        row.extend_from_slice(x);
        row.extend_from_slice(&self.u);
        row.push(viol);
        row.push(self.terminal);
        row.push(self.horizon);
        row.push(if self.log_timing { step_time } else { 0.0 });
        row.extend_from_slice(extra);
        self.log.push(row);
    }

    /// Trapezoid contribution of `l` over `[t, t + h]` with the current control.
    fn integrate(&mut self, t: f64, h: f64, xa: &[f64], xb: &[f64]) {
        let la = self.model.l(t, xa, &self.u, &[], &self.des);
        let lb = self.model.l(t + h, xb, &self.u, &[], &self.des);
        self.metrics.j_int += 0.5 * h * (la + lb);
    }

    fn finish(mut self, t: f64, x: &[f64]) -> RunOutput {
        self.metrics.simulated_time = t;
        if self.metrics.steps > 0 {
            self.metrics.j_int += self.model.v(self.horizon, x, &[], &self.des);
        }
        self.metrics.terminal_error =
            x.iter().zip(&self.des.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if !self.step_times.is_empty() {
            self.metrics.step_time_mean_s = self.step_times.iter().sum::<f64>() / self.step_times.len() as f64;
            self.metrics.step_time_max_s = self.step_times.iter().copied().fold(0.0, f64::max);
        }
        let has_constraints = self.dims.has_constraints()
            || self.bounds.u_min.iter().chain(&self.bounds.u_max).any(|v| v.is_finite());
        if has_constraints && self.metrics.steps > 0 && !self.metrics.constraints_active {
            self.metrics.flags.push("constraints never active".into());
        }
        RunOutput {
            log: self.log,
            metrics: self.metrics,
        }
    }

    fn fail(self, t: f64, x: &[f64], error: SolverError) -> RunError {
        let mut partial = self.finish(t, x);
        partial.metrics.flags.push(format!("aborted: {error}"));
        RunError::Numerical {
            error,
            partial: Box::new(partial),
        }
    }
}

/// Plant integration over one sampling interval. With `log_substeps > 1`
/// the intermediate states are logged from side integrations; the plant
/// itself always takes a single step of length `dt`.
fn simulate_interval<P: Problem>(
    plant: &mut Plant<P>,
    rec: &mut Recorder<'_, P>,
    t0: f64,
    dt: f64,
    substeps: usize,
    x: &mut [f64],
    extra: &[f64],
) -> pgmpc::Result<()> {
    let h = dt / substeps as f64;
    let u = rec.u.clone();
    let start = x.to_vec();
    let mut xa = start.clone();
    for s in 1..substeps {
        let mut xb = start.clone();
        plant.sample(t0, s as f64 * h, &mut xb, &u)?;
        rec.integrate(t0 + (s - 1) as f64 * h, h, &xa, &xb);
        rec.row(t0 + s as f64 * h, &xb, 0.0, extra);
        xa = xb;
    }
    plant.advance(t0, dt, x, &u)?;
    rec.integrate(t0 + (substeps - 1) as f64 * h, h, &xa, x);
    Ok(())
}

/// Closed-loop MPC run with the plant simulated by [`Plant`]. In shrinking
/// mode the run ends when the horizon reaches `T_min`; the remaining
/// predicted control is then applied open loop.
pub fn run_mpc<P: Problem + Clone>(model: P, bounds: Bounds, sc: &Scenario) -> Result<RunOutput, RunError> {
    sc.validate()?;
    let cfg = match sc.kind {
        ScenarioKind::Mpc => MpcConfig::fixed(sc.dt, sc.horizon),
        ScenarioKind::ShrinkingMpc => MpcConfig::shrinking(sc.dt, sc.horizon, sc.t_min),
        other => return Err(RunError::Config(format!("run_mpc cannot run a {other:?} scenario"))),
    };
    let mut ctrl = MpcController::new(model.clone(), bounds.clone(), sc.options.clone(), cfg).map_err(config_err)?;
    ctrl.set_setpoint(Setpoint::new(sc.x_des.clone(), sc.u_des.clone())).map_err(config_err)?;
    let mut plant = Plant::new(model.clone(), vec![]).map_err(config_err)?;
    let mut rec = Recorder::new(&model, sc, &bounds, &[]);

    let mut x = sc.x0.clone();
    let mut t = 0.0;
    for k in 0..sc.steps() {
        let clock = Instant::now();
        let step = match ctrl.step(&x) {
            Ok(s) => s,
            Err(e) => return Err(rec.fail(t, &x, e)),
        };
        let seconds = clock.elapsed().as_secs_f64();
        rec.record_step(&step, seconds);
        rec.row(t, &x, seconds, &[]);
        if let Err(e) = simulate_interval(&mut plant, &mut rec, t, sc.dt, sc.log_substeps, &mut x, &[]) {
            return Err(rec.fail(t, &x, e));
        }
        t = (k + 1) as f64 * sc.dt;
        if step.stopped {
            let sol = ctrl.last_solution().expect("a step was taken").clone();
            let rest = sol.horizon - sc.dt;
            if rest > 0.0 {
                if let Err(e) = finish_open_loop(&mut plant, &mut rec, &sol, sc.dt, t, rest, &mut x) {
                    return Err(rec.fail(t, &x, e));
                }
                t += rest;
            }
            rec.metrics.extra.insert("stop_time".into(), t);
            rec.horizon = rest.max(0.0);
            break;
        }
    }
    rec.row(t, &x, 0.0, &[]);
    Ok(rec.finish(t, &x))
}

/// Applies the remaining part `[offset, offset + rest]` of a predicted
/// control trajectory.
fn finish_open_loop<P: Problem>(
    plant: &mut Plant<P>,
    rec: &mut Recorder<'_, P>,
    sol: &SolverSolution,
    offset: f64,
    t0: f64,
    rest: f64,
    x: &mut [f64],
) -> pgmpc::Result<()> {
    let xa = x.to_vec();
    plant.advance_with(t0, rest, x, |t, out| sol.u.interpolate(&sol.grid, offset + t - t0, out))?;
    rec.integrate(t0, rest, &xa, x);
    Ok(())
}

/// One-shot solve of an OCP scenario. The log holds the solution on the
/// horizon grid.
pub fn run_ocp<P: Problem>(model: P, bounds: Bounds, sc: &Scenario) -> Result<RunOutput, RunError> {
    sc.validate()?;
    let mut solver = Solver::new(model, bounds.clone(), sc.options.clone()).map_err(config_err)?;
    solver.set_initial_state(&sc.x0).map_err(config_err)?;
    solver.set_setpoint(Setpoint::new(sc.x_des.clone(), sc.u_des.clone())).map_err(config_err)?;
    solver.set_horizon(sc.horizon).map_err(config_err)?;
    let clock = Instant::now();
    let result = solver.solve();
    let seconds = clock.elapsed().as_secs_f64();
    let dims = solver.dims().clone();
    let mut log = TrajectoryLog::new(dims.nx, dims.nu, &[]);
    log.comments.push(format!("scenario={}", sc.name));
    log.comments.push(format!("seed={}", sc.seed));
    let mut metrics = RunMetrics {
        scenario: sc.name.clone(),
        seed: sc.seed,
        ..RunMetrics::default()
    };
    let sol = match result {
        Ok(sol) => sol,
        Err(error) => {
            metrics.flags.push(format!("aborted: {error}"));
            return Err(RunError::Numerical {
                error,
                partial: Box::new(RunOutput { log, metrics }),
            });
        }
    };
    let pr = solver.problem();
    let r = &sol.residuals;
    let path = r.max_path_eq().max(r.max_path_ineq());
    let terminal = r.max_terminal_eq().max(r.max_terminal_ineq());
    for i in 0..sol.grid.len() {
        let t = sol.grid.time(i);
        let (viol, _) = path_measures(pr, t, sol.x.row(i), sol.u.row(i));
        metrics.max_constraint_violation = metrics.max_constraint_violation.max(viol);
        let mut row = vec![t];
        row.extend_from_slice(sol.x.row(i));
        row.extend_from_slice(sol.u.row(i));
        row.push(viol);
        row.push(terminal);
        row.push(sol.horizon);
        row.push(if sc.log_timing && i == 0 { seconds } else { 0.0 });
        log.push(row);
    }
    metrics.steps = 1;
    metrics.simulated_time = sol.horizon;
    metrics.j_int = sol.cost;
    metrics.terminal_error = sol
        .x
        .last()
        .iter()
        .zip(&sc.x_des)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    metrics.step_time_mean_s = seconds;
    metrics.step_time_max_s = seconds;
    metrics.outer_iterations = sol.outer_iterations;
    metrics.inner_iterations = sol.inner_iterations;
    metrics.converged_steps = usize::from(sol.converged());
    metrics.constraints_active = dims.has_constraints();
    metrics.extra.insert("converged".into(), f64::from(u8::from(sol.converged())));
    metrics.extra.insert("max_path_residual".into(), path);
    metrics.extra.insert("max_terminal_residual".into(), terminal);
    metrics.extra.insert(
        "avg_inner_iterations".into(),
        sol.inner_iterations as f64 / sol.outer_iterations.max(1) as f64,
    );
    Ok(RunOutput { log, metrics })
}

/// Setpoint switch at a given time.
#[derive(Debug, Clone, PartialEq)]
pub struct SetpointChange {
    pub at: f64,
    pub setpoint: Setpoint,
}

/// MPC on the estimate of a moving horizon estimator that sees the outputs
/// `σ(x)` with Gaussian noise. Before the window fills, the MPC receives the
/// open-loop prediction from the initial estimate.
pub fn run_mpc_mhe<P, O>(
    model: P,
    bounds: Bounds,
    output: O,
    sc: &Scenario,
    initial_estimate: &[f64],
    state_scale: Vec<f64>,
    schedule: &[SetpointChange],
) -> Result<RunOutput, RunError>
where
    P: Problem + Clone,
    O: Output + Clone,
{
    sc.validate()?;
    let mhe_set = sc.mhe.clone().ok_or_else(|| RunError::Config("scenario lacks estimator settings".into()))?;
    let dims = model.dims();
    let ny = output.ny();
    let mut ctrl = MpcController::new(model.clone(), bounds.clone(), sc.options.clone(), MpcConfig::fixed(sc.dt, sc.horizon))
        .map_err(config_err)?;
    ctrl.set_setpoint(Setpoint::new(sc.x_des.clone(), sc.u_des.clone())).map_err(config_err)?;
    let mhe_cfg = MheConfig {
        window: mhe_set.window,
        dt: sc.dt,
        state_scale,
        reverse_time: false,
    };
    let mut mhe = MheEstimator::new(model.clone(), output.clone(), vec![], mhe_cfg, mhe_set.options.clone(), initial_estimate)
        .map_err(config_err)?;
    let noise = Normal::new(0.0, mhe_set.noise_std).map_err(|e| RunError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);

    let mut plant = Plant::new(model.clone(), vec![]).map_err(config_err)?;
    let mut predictor = Plant::new(model.clone(), vec![]).map_err(config_err)?;
    let extra_names: Vec<String> = (0..dims.nx)
        .map(|i| format!("xhat{i}"))
        .chain((0..ny).map(|i| format!("y{i}")))
        .collect();
    let extra_refs: Vec<&str> = extra_names.iter().map(String::as_str).collect();
    let mut rec = Recorder::new(&model, sc, &bounds, &extra_refs);
    rec.log.comments.push(format!("noise_std={}", mhe_set.noise_std));

    let mut x = sc.x0.clone();
    let mut prediction = initial_estimate.to_vec();
    let mut u_prev = sc.u_des.clone();
    let mut next_change = 0;
    let mut t = 0.0;
    let mut estimated = 0usize;
    for k in 0..sc.steps() {
        while next_change < schedule.len() && schedule[next_change].at <= t + 1e-12 {
            let sp = schedule[next_change].setpoint.clone();
            rec.des = sp.clone();
            ctrl.set_setpoint(sp).map_err(config_err)?;
            next_change += 1;
        }
        let mut y = vec![0.0; ny];
        output.sigma(&mut y, t, &x);
        for v in &mut y {
            *v += noise.sample(&mut rng);
        }
        let clock = Instant::now();
        let x_hat = match mhe.step(t, &u_prev, &y) {
            Ok(est) => {
                estimated += 1;
                est
            }
            Err(SolverError::InsufficientData { .. }) => prediction.clone(),
            Err(e) => return Err(rec.fail(t, &x, e)),
        };
        let step = match ctrl.step(&x_hat) {
            Ok(s) => s,
            Err(e) => return Err(rec.fail(t, &x, e)),
        };
        let seconds = clock.elapsed().as_secs_f64();
        rec.record_step(&step, seconds);
        let extra: Vec<f64> = x_hat.iter().chain(&y).copied().collect();
        rec.row(t, &x, seconds, &extra);
        if let Err(e) = simulate_interval(&mut plant, &mut rec, t, sc.dt, sc.log_substeps, &mut x, &extra) {
            return Err(rec.fail(t, &x, e));
        }
        prediction = x_hat;
        if let Err(e) = predictor.advance(t, sc.dt, &mut prediction, &step.u) {
            return Err(rec.fail(t, &x, e));
        }
        u_prev = step.u;
        t = (k + 1) as f64 * sc.dt;
    }
    rec.metrics.extra.insert("estimates".into(), estimated as f64);
    let last_extra: Vec<f64> = rec.log.rows.last().map(|r| r[r.len() - dims.nx - ny..].to_vec()).unwrap_or_else(|| {
        initial_estimate.iter().copied().chain(std::iter::repeat(0.0).take(ny)).collect()
    });
    rec.row(t, &x, 0.0, &last_extra);
    Ok(rec.finish(t, &x))
}

/// Default options with the given iteration limits.
pub fn options_with(n_hor: usize, max_mult_iter: usize, max_grad_iter: usize) -> SolverOptions {
    SolverOptions {
        n_hor,
        max_mult_iter,
        max_grad_iter,
        ..SolverOptions::default()
    }
}
