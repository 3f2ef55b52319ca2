//! Linear single-axis ball-on-plate model with box constraints on both states.

use pgmpc::problem::{Bounds, HookSet, Problem, ProblemDims, Setpoint};

#[derive(Debug, Clone, PartialEq)]
pub struct BallOnPlate {
    pub q: [f64; 2],
    pub r: f64,
    pub p: [f64; 2],
    pub x_min: [f64; 2],
    pub x_max: [f64; 2],
    pub u_max: f64,
}

impl Default for BallOnPlate {
    fn default() -> Self {
        BallOnPlate {
            q: [100.0, 10.0],
            r: 1.0,
            p: [100.0, 10.0],
            x_min: [-0.2, -0.1],
            x_max: [0.01, 0.1],
            u_max: 0.0524,
        }
    }
}

impl BallOnPlate {
    pub fn bounds(&self) -> Bounds {
        Bounds::unbounded(&self.dims()).with_controls(vec![-self.u_max], vec![self.u_max])
    }
}

impl Problem for BallOnPlate {
    fn dims(&self) -> ProblemDims {
        ProblemDims::new(2, 1).with_path_constraints(0, 4)
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
            | HookSet::H
            | HookSet::DHDX_MULT
            | HookSet::DHDU_MULT
    }

    fn f(&self, out: &mut [f64], _t: f64, x: &[f64], u: &[f64], _p: &[f64]) {
        out[0] = x[1] - 0.04 * u[0];
        out[1] = -7.01 * u[0];
    }

    fn dfdx_mult(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64], vec: &[f64]) {
        out[0] = 0.0;
        out[1] = vec[0];
    }

    fn dfdu_mult(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64], vec: &[f64]) {
        out[0] = -0.04 * vec[0] - 7.01 * vec[1];
    }

    fn l(&self, _t: f64, x: &[f64], u: &[f64], _p: &[f64], des: &Setpoint) -> f64 {
        let dx0 = x[0] - des.x[0];
        let dx1 = x[1] - des.x[1];
        let du = u[0] - des.u[0];
        0.5 * (self.q[0] * dx0 * dx0 + self.q[1] * dx1 * dx1 + self.r * du * du)
    }

    fn dldx(&self, out: &mut [f64], _t: f64, x: &[f64], _u: &[f64], _p: &[f64], des: &Setpoint) {
        out[0] = self.q[0] * (x[0] - des.x[0]);
        out[1] = self.q[1] * (x[1] - des.x[1]);
    }

    fn dldu(&self, out: &mut [f64], _t: f64, _x: &[f64], u: &[f64], _p: &[f64], des: &Setpoint) {
        out[0] = self.r * (u[0] - des.u[0]);
    }

    fn v(&self, _horizon: f64, x: &[f64], _p: &[f64], des: &Setpoint) -> f64 {
        let dx0 = x[0] - des.x[0];
        let dx1 = x[1] - des.x[1];
        0.5 * (self.p[0] * dx0 * dx0 + self.p[1] * dx1 * dx1)
    }

    fn dvdx(&self, out: &mut [f64], _horizon: f64, x: &[f64], _p: &[f64], des: &Setpoint) {
        out[0] = self.p[0] * (x[0] - des.x[0]);
        out[1] = self.p[1] * (x[1] - des.x[1]);
    }

    fn h(&self, out: &mut [f64], _t: f64, x: &[f64], _u: &[f64], _p: &[f64]) {
        out[0] = self.x_min[0] - x[0];
        out[1] = x[0] - self.x_max[0];
        out[2] = self.x_min[1] - x[1];
        out[3] = x[1] - self.x_max[1];
    }

    fn dhdx_mult(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64], vec: &[f64]) {
        out[0] = vec[1] - vec[0];
        out[1] = vec[3] - vec[2];
    }

    fn dhdu_mult(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64], _vec: &[f64]) {
        out[0] = 0.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_match_listing() {
        let d = BallOnPlate::default().dims();
        assert_eq!((d.nx, d.nu, d.nh), (2, 1, 4));
    }

    #[test]
    fn upper_position_bound_active() {
        let mut h = [0.0; 4];
        BallOnPlate::default().h(&mut h, 0.0, &[0.01, 0.0], &[0.0], &[]);
        // [−0.2 − 0.01, 0.01 − 0.01, −0.1 − 0, 0 − 0.1]
        let expected = [-0.21, 0.0, -0.1, -0.1];
        for (a, b) in h.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{h:?}");
        }
    }
}
