//! Time-optimal double integrator with a small control penalty and a
//! terminal state equality, for shrinking horizon MPC.

use pgmpc::problem::{Bounds, HookSet, Problem, ProblemDims, Setpoint};

#[derive(Debug, Clone, PartialEq)]
pub struct DoubleIntegrator {
    pub r: f64,
    pub u_max: f64,
}

impl Default for DoubleIntegrator {
    fn default() -> Self {
        DoubleIntegrator { r: 0.01, u_max: 1.0 }
    }
}

impl DoubleIntegrator {
    /// Control box only; the horizon limits are set by the scenario.
    pub fn bounds(&self) -> Bounds {
        Bounds::unbounded(&self.dims()).with_controls(vec![-self.u_max], vec![self.u_max])
    }
}

impl Problem for DoubleIntegrator {
    fn dims(&self) -> ProblemDims {
        ProblemDims::new(2, 1).with_terminal_constraints(2, 0)
    }

    fn hooks(&self) -> HookSet {
        HookSet::F
            | HookSet::DFDX_MULT
            | HookSet::DFDU_MULT
            | HookSet::L
            | HookSet::DLDX
            | HookSet::DLDU
            | HookSet::V
            | HookSet::DVDX
            | HookSet::DVDT
            | HookSet::GT
            | HookSet::DGTDX_MULT
            | HookSet::DGTDT_MULT
    }

    fn f(&self, out: &mut [f64], _t: f64, x: &[f64], u: &[f64], _p: &[f64]) {
        out[0] = x[1];
        out[1] = u[0];
    }

    fn dfdx_mult(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64], vec: &[f64]) {
        out[0] = 0.0;
        out[1] = vec[0];
    }

    fn dfdu_mult(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64], vec: &[f64]) {
        out[0] = vec[1];
    }

    fn l(&self, _t: f64, _x: &[f64], u: &[f64], _p: &[f64], _des: &Setpoint) -> f64 {
        0.5 * self.r * u[0] * u[0]
    }

    fn dldx(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64], _des: &Setpoint) {
        out.fill(0.0);
    }

    fn dldu(&self, out: &mut [f64], _t: f64, _x: &[f64], u: &[f64], _p: &[f64], _des: &Setpoint) {
        out[0] = self.r * u[0];
    }

    fn v(&self, horizon: f64, _x: &[f64], _p: &[f64], _des: &Setpoint) -> f64 {
        horizon
    }

    fn dvdx(&self, out: &mut [f64], _horizon: f64, _x: &[f64], _p: &[f64], _des: &Setpoint) {
        out.fill(0.0);
    }

    fn dvdt(&self, _horizon: f64, _x: &[f64], _p: &[f64], _des: &Setpoint) -> f64 {
        1.0
    }

    /// Target is the origin.
    fn gt(&self, out: &mut [f64], _horizon: f64, x: &[f64], _p: &[f64]) {
        out.copy_from_slice(x);
    }

    fn dgtdx_mult(&self, out: &mut [f64], _horizon: f64, _x: &[f64], _p: &[f64], vec: &[f64]) {
        out.copy_from_slice(vec);
    }

    fn dgtdt_mult(&self, _horizon: f64, _x: &[f64], _p: &[f64], _vec: &[f64]) -> f64 {
        0.0
    }
}
