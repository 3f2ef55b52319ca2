//! Real-time drivers: fixed and shrinking horizon MPC, and moving horizon
//! estimation through parameter optimization.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::auglag::ConvergenceStatus;
use crate::error::{Result, SolverError};
use crate::options::SolverOptions;
use crate::problem::{Bounds, HookSet, Problem, ProblemDims, Setpoint};
use crate::solver::{Solver, SolverSolution};

/// Sampling and warm-start policy of an MPC loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub dt: f64,
    /// Initial prediction horizon.
    pub horizon: f64,
    pub warm_start_shift: bool,
    /// Shrinking horizon mode with its stop threshold `T_min`.
    pub shrinking: Option<f64>,
}

impl MpcConfig {
    pub fn fixed(dt: f64, horizon: f64) -> Self {
        MpcConfig {
            dt,
            horizon,
            warm_start_shift: true,
            shrinking: None,
        }
    }

    pub fn shrinking(dt: f64, horizon: f64, t_min: f64) -> Self {
        MpcConfig {
            dt,
            horizon,
            warm_start_shift: true,
            shrinking: Some(t_min),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= self.horizon && self.horizon.is_finite()) {
            return Err(SolverError::InvalidInput(format!(
                "sampling time {} must satisfy 0 < dt <= T = {}",
                self.dt, self.horizon
            )));
        }
        if let Some(t_min) = self.shrinking {
            if !(t_min > 0.0 && t_min <= self.horizon) {
                return Err(SolverError::InvalidInput(format!("T_min = {t_min} must lie in (0, T]")));
            }
        }
        Ok(())
    }
}

/// Diagnostics of one controller step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcStep {
    /// First control sample, applied over the next sampling interval.
    pub u: Vec<f64>,
    /// Horizon length of the solution.
    pub horizon: f64,
    pub cost: f64,
    pub status: ConvergenceStatus,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub eta: f64,
    pub max_path_violation: f64,
    pub max_terminal_violation: f64,
    /// Shrinking mode: the horizon reached `T_min`.
    pub stopped: bool,
}

/// MPC controller around a warm-started [`Solver`].
pub struct MpcController<P> {
    solver: Solver<P>,
    cfg: MpcConfig,
    t: f64,
    last_u: Vec<f64>,
    last_solution: Option<SolverSolution>,
    stopped: bool,
}

impl<P: Problem> MpcController<P> {
    /// In shrinking mode the horizon lower bound is raised to `T_min`.
    pub fn new(problem: P, mut bounds: Bounds, opts: SolverOptions, cfg: MpcConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.shrinking.is_some() && !opts.optim_time {
            return Err(SolverError::InvalidInput("shrinking horizon requires OptimTime".into()));
        }
        if let Some(t_min) = cfg.shrinking {
            bounds.t_min = bounds.t_min.max(t_min);
        }
        let mut solver = Solver::new(problem, bounds, opts)?;
        solver.set_horizon(cfg.horizon)?;
        let last_u = solver.control_guess().row(0).to_vec();
        Ok(MpcController {
            solver,
            cfg,
            t: 0.0,
            last_u,
            last_solution: None,
            stopped: false,
        })
    }

    pub fn solver(&self) -> &Solver<P> {
        &self.solver
    }

    pub fn solver_mut(&mut self) -> &mut Solver<P> {
        &mut self.solver
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Control applied by the last successful step, or the initial guess.
    pub fn last_control(&self) -> &[f64] {
        &self.last_u
    }

    pub fn last_solution(&self) -> Option<&SolverSolution> {
        self.last_solution.as_ref()
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    pub fn set_setpoint(&mut self, setpoint: Setpoint) -> Result<()> {
        self.solver.set_setpoint(setpoint)
    }

    /// Solves for the measured state `x_k` at the current time, returns the
    /// first control sample and prepares the warm start of the next step.
    /// On error the previous control stays available via
    /// [`Self::last_control`] and the time does not advance.
    pub fn step(&mut self, x_k: &[f64]) -> Result<MpcStep> {
        self.solver.set_initial_state(x_k)?;
        self.solver.set_time(self.t);
        let sol = self.solver.solve()?;
        let u = sol.u.row(0).to_vec();
        let record = sol.history.last().expect("solve runs at least one iteration");
        let mut step = MpcStep {
            u: u.clone(),
            horizon: sol.horizon,
            cost: sol.cost,
            status: sol.status,
            outer_iterations: sol.outer_iterations,
            inner_iterations: sol.inner_iterations,
            eta: record.eta,
            max_path_violation: record.max_path_eq.max(record.max_path_ineq),
            max_terminal_violation: record.max_terminal_eq.max(record.max_terminal_ineq),
            stopped: false,
        };
        let dt = self.cfg.dt;
        match self.cfg.shrinking {
            Some(t_min) => {
                let next = sol.horizon - dt;
                step.stopped = next <= t_min;
                self.stopped = step.stopped;
                let shift = if self.cfg.warm_start_shift { dt } else { 0.0 };
                self.solver.shift_to_horizon(shift, next.max(t_min))?;
            }
            None if self.cfg.warm_start_shift => self.solver.shift(dt),
            None => {}
        }
        self.t += dt;
        self.last_u = u;
        self.last_solution = Some(sol);
        Ok(step)
    }
}

/// Measured output `y = σ(x)` of an estimation model.
pub trait Output: Send + Sync {
    fn ny(&self) -> usize;
    fn sigma(&self, out: &mut [f64], t: f64, x: &[f64]);
    /// `(∂σ/∂x)ᵀ vec`
    fn dsigma_dx_mult(&self, out: &mut [f64], t: f64, x: &[f64], vec: &[f64]);
}

/// Output consisting of selected state components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSelection {
    pub indices: Vec<usize>,
}

impl Output for StateSelection {
    fn ny(&self) -> usize {
        self.indices.len()
    }
    fn sigma(&self, out: &mut [f64], _t: f64, x: &[f64]) {
        for (o, &k) in out.iter_mut().zip(&self.indices) {
            *o = x[k];
        }
    }
    fn dsigma_dx_mult(&self, out: &mut [f64], _t: f64, _x: &[f64], vec: &[f64]) {
        out.fill(0.0);
        for (v, &k) in vec.iter().zip(&self.indices) {
            out[k] += v;
        }
    }
}

/// Estimation window and solver setup of an MHE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MheConfig {
    pub window: f64,
    pub dt: f64,
    /// Positive state scale; the estimator optimizes `x / scale`.
    pub state_scale: Vec<f64>,
    /// Reverse time transformation; only the forward form is supported.
    pub reverse_time: bool,
}

impl MheConfig {
    /// Number of buffered samples needed for the first estimate.
    pub fn required_samples(&self) -> usize {
        (self.window / self.dt - 1e-9).ceil() as usize + 1
    }
}

/// Estimation problem over the window `[t_k − T, t_k]` in the shifted
/// coordinates `x̃ = x̂(t_k − T + τ)/s − p`, `x̃(0) = 0`, with the scaled initial
/// window state `p = x̂(t_k − T)/s` as optimization variable and the cost
/// `∫ ‖σ(s⊙(x̃ + p)) − ỹ‖² dτ`.
pub struct MheProblem<P, O> {
    plant: P,
    output: O,
    plant_params: Vec<f64>,
    scale: Vec<f64>,
    nx: usize,
    ny: usize,
    /// sample times, controls held from the previous sample, measurements
    times: Vec<f64>,
    controls: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

impl<P: Problem, O: Output> MheProblem<P, O> {
    fn new(plant: P, output: O, plant_params: Vec<f64>, scale: Vec<f64>) -> Self {
        let nx = plant.dims().nx;
        let ny = output.ny();
        MheProblem {
            plant,
            output,
            plant_params,
            scale,
            nx,
            ny,
            times: Vec::new(),
            controls: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn state(&self, xt: &[f64], p: &[f64]) -> Vec<f64> {
        (0..self.nx).map(|k| self.scale[k] * (xt[k] + p[k])).collect()
    }

    /// Control applied at time `t`: the sample of the interval `(t_{j−1}, t_j]`.
    fn control_at(&self, t: f64) -> &[f64] {
        let j = self.times.partition_point(|&tj| tj < t - 1e-12).min(self.times.len() - 1);
        &self.controls[j]
    }

    fn measurement_at(&self, t: f64, out: &mut [f64]) {
        let n = self.times.len();
        let j = self.times.partition_point(|&tj| tj <= t).clamp(1, n - 1);
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        for k in 0..self.ny {
            out[k] = self.outputs[j - 1][k] + w * (self.outputs[j][k] - self.outputs[j - 1][k]);
        }
    }

    /// `2 (σ − y)` at the unscaled state `x`.
    fn residual2(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.ny];
        let mut y = vec![0.0; self.ny];
        self.output.sigma(&mut s, t, x);
        self.measurement_at(t, &mut y);
        s.iter().zip(&y).map(|(a, b)| 2.0 * (a - b)).collect()
    }

    /// `s ⊙ (∂f/∂x)ᵀ (vec / s)`
    fn scaled_fx_mult(&self, out: &mut [f64], t: f64, xt: &[f64], p: &[f64], vec: &[f64]) {
        let x = self.state(xt, p);
        let v: Vec<f64> = vec.iter().zip(&self.scale).map(|(a, s)| a / s).collect();
        self.plant.dfdx_mult(out, t, &x, self.control_at(t), &self.plant_params, &v);
        for (o, s) in out.iter_mut().zip(&self.scale) {
            *o *= s;
        }
    }

    fn scaled_lx(&self, out: &mut [f64], t: f64, xt: &[f64], p: &[f64]) {
        let x = self.state(xt, p);
        let r = self.residual2(t, &x);
        self.output.dsigma_dx_mult(out, t, &x, &r);
        for (o, s) in out.iter_mut().zip(&self.scale) {
            *o *= s;
        }
    }
}

impl<P: Problem, O: Output> Problem for MheProblem<P, O> {
    fn dims(&self) -> ProblemDims {
        ProblemDims::new(self.nx, 0).with_params(self.nx)
    }

    fn hooks(&self) -> HookSet {
        HookSet::F | HookSet::DFDX_MULT | HookSet::DFDP_MULT | HookSet::L | HookSet::DLDX | HookSet::DLDP
    }

    fn mass_matrix(&self) -> Option<Vec<f64>> {
        let mut m = self.plant.mass_matrix()?;
        let n = self.nx;
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] *= self.scale[j] / self.scale[i];
            }
        }
        Some(m)
    }

    fn f(&self, out: &mut [f64], t: f64, x: &[f64], _u: &[f64], p: &[f64]) {
        let xs = self.state(x, p);
        self.plant.f(out, t, &xs, self.control_at(t), &self.plant_params);
        for (o, s) in out.iter_mut().zip(&self.scale) {
            *o /= s;
        }
    }

    fn dfdx_mult(&self, out: &mut [f64], t: f64, x: &[f64], _u: &[f64], p: &[f64], vec: &[f64]) {
        self.scaled_fx_mult(out, t, x, p, vec);
    }

    fn dfdp_mult(&self, out: &mut [f64], t: f64, x: &[f64], _u: &[f64], p: &[f64], vec: &[f64]) {
        self.scaled_fx_mult(out, t, x, p, vec);
    }

    fn l(&self, t: f64, x: &[f64], _u: &[f64], p: &[f64], _des: &Setpoint) -> f64 {
        let xs = self.state(x, p);
        let r = self.residual2(t, &xs);
        0.25 * r.iter().map(|v| v * v).sum::<f64>()
    }

    fn dldx(&self, out: &mut [f64], t: f64, x: &[f64], _u: &[f64], p: &[f64], _des: &Setpoint) {
        self.scaled_lx(out, t, x, p);
    }

    fn dldp(&self, out: &mut [f64], t: f64, x: &[f64], _u: &[f64], p: &[f64], _des: &Setpoint) {
        self.scaled_lx(out, t, x, p);
    }
}

/// Moving horizon estimator.
pub struct MheEstimator<P, O> {
    solver: Solver<MheProblem<P, O>>,
    cfg: MheConfig,
    buffer: VecDeque<(f64, Vec<f64>, Vec<f64>)>,
    /// scaled `x̂(t_k − T)` guess for the next window
    p_next: Vec<f64>,
    last: Option<SolverSolution>,
}

impl<P: Problem, O: Output> MheEstimator<P, O> {
    /// `initial_estimate` is the guess of the state at the first sample time.
    /// `opts` are adjusted to parameter optimization at a fixed window length.
    pub fn new(
        plant: P,
        output: O,
        plant_params: Vec<f64>,
        cfg: MheConfig,
        mut opts: SolverOptions,
        initial_estimate: &[f64],
    ) -> Result<Self> {
        if cfg.reverse_time {
            return Err(SolverError::InvalidInput("reverse time transformation is not supported".into()));
        }
        if !(cfg.dt > 0.0 && cfg.window >= cfg.dt) {
            return Err(SolverError::InvalidInput("MHE needs 0 < dt <= window".into()));
        }
        let nx = plant.dims().nx;
        if cfg.state_scale.len() != nx || cfg.state_scale.iter().any(|&s| !(s > 0.0)) {
            return Err(SolverError::InvalidInput(format!("state_scale needs {nx} positive entries")));
        }
        if initial_estimate.len() != nx {
            return Err(SolverError::InvalidInput(format!("initial estimate needs {nx} entries")));
        }
        if !plant.hooks().contains(HookSet::F | HookSet::DFDX_MULT) {
            return Err(SolverError::InvalidProblem("MHE requires the hooks f and dfdx_mult".into()));
        }
        opts.optim_param = true;
        opts.optim_time = false;
        let problem = MheProblem::new(plant, output, plant_params, cfg.state_scale.clone());
        let dims = problem.dims();
        let bounds = Bounds::unbounded(&dims).with_horizon(cfg.window, cfg.window);
        let mut solver = Solver::new(problem, bounds, opts)?;
        solver.set_horizon(cfg.window)?;
        let p_next = initial_estimate.iter().zip(&cfg.state_scale).map(|(x, s)| x / s).collect();
        Ok(MheEstimator {
            solver,
            cfg,
            buffer: VecDeque::new(),
            p_next,
            last: None,
        })
    }

    pub fn config(&self) -> &MheConfig {
        &self.cfg
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn last_solution(&self) -> Option<&SolverSolution> {
        self.last.as_ref()
    }

    /// Current guess of the state at the start of the next window.
    pub fn window_start_guess(&self) -> Vec<f64> {
        self.p_next.iter().zip(&self.cfg.state_scale).map(|(p, s)| p * s).collect()
    }

    /// Stores the measurement `y` taken at `t` together with the control
    /// applied since the previous sample and, once the window is filled,
    /// returns the estimate `x̂(t)`.
    pub fn step(&mut self, t: f64, u_prev: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let need = self.cfg.required_samples();
        self.buffer.push_back((t, u_prev.to_vec(), y.to_vec()));
        while self.buffer.len() > need {
            self.buffer.pop_front();
        }
        if self.buffer.len() < need {
            return Err(SolverError::InsufficientData {
                have: self.buffer.len(),
                need,
            });
        }
        let t_start = t - self.cfg.window;
        {
            let pr = self.solver.problem_mut();
            pr.times = self.buffer.iter().map(|b| b.0).collect();
            pr.controls = self.buffer.iter().map(|b| b.1.clone()).collect();
            pr.outputs = self.buffer.iter().map(|b| b.2.clone()).collect();
        }
        let nx = self.p_next.len();
        self.solver.set_time(t_start);
        self.solver.set_initial_state(&vec![0.0; nx])?;
        self.solver.set_param_guess(&self.p_next)?;
        let sol = self.solver.solve()?;
        let p = &sol.p;
        let xt_end = sol.x.last();
        let mut xt_dt = vec![0.0; nx];
        sol.x.interpolate(&sol.grid, self.cfg.dt, &mut xt_dt);
        let s = &self.cfg.state_scale;
        let estimate = (0..nx).map(|k| s[k] * (p[k] + xt_end[k])).collect();
        self.p_next = (0..nx).map(|k| p[k] + xt_dt[k]).collect();
        self.last = Some(sol);
        Ok(estimate)
    }
}
