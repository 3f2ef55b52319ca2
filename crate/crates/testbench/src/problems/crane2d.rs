//! Planar gantry crane with variable rope length and an obstacle constraint
//! on the load position.

use pgmpc::problem::{Bounds, HookSet, Problem, ProblemDims, Setpoint};
use serde::Deserialize;

const DATA: &str = include_str!("../../data/crane2d.toml");

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Crane2d {
    pub gravity: f64,
    pub q: [f64; 6],
    pub r: [f64; 2],
    pub u_max: [f64; 2],
    pub dphi_max: f64,
    pub obstacle_curvature: f64,
    pub obstacle_clearance: f64,
}

impl Default for Crane2d {
    fn default() -> Self {
        toml::from_str(DATA).expect("bundled crane2d.toml is valid")
    }
}

impl Crane2d {
    pub fn bounds(&self) -> Bounds {
        let lo = self.u_max.iter().map(|v| -v).collect();
        Bounds::unbounded(&self.dims()).with_controls(lo, self.u_max.to_vec())
    }

    /// Horizontal load position `s_C + sin(φ) s_R`.
    fn load_x(x: &[f64]) -> f64 {
        x[0] + x[4].sin() * x[2]
    }

    /// Obstacle constraint value, feasible where `≤ 0`.
    pub fn obstacle(&self, x: &[f64]) -> f64 {
        let lx = Self::load_x(x);
        x[4].cos() * x[2] - self.obstacle_curvature * lx * lx - self.obstacle_clearance
    }
}

impl Problem for Crane2d {
    fn dims(&self) -> ProblemDims {
        ProblemDims::new(6, 2).with_path_constraints(0, 3)
    }

    fn hooks(&self) -> HookSet {
        HookSet::F
            | HookSet::DFDX_MULT
            | HookSet::DFDU_MULT
            | HookSet::L
            | HookSet::DLDX
            | HookSet::DLDU
            | HookSet::H
            | HookSet::DHDX_MULT
            | HookSet::DHDU_MULT
    }

    fn f(&self, out: &mut [f64], _t: f64, x: &[f64], u: &[f64], _p: &[f64]) {
        let (sr, dsr, phi, dphi) = (x[2], x[3], x[4], x[5]);
        out[0] = x[1];
        out[1] = u[0];
        out[2] = dsr;
        out[3] = u[1];
        out[4] = dphi;
        out[5] = -(self.gravity * phi.sin() + u[0] * phi.cos() + 2.0 * dsr * dphi) / sr;
    }

    fn dfdx_mult(&self, out: &mut [f64], _t: f64, x: &[f64], u: &[f64], _p: &[f64], vec: &[f64]) {
        let (sr, dsr, phi, dphi) = (x[2], x[3], x[4], x[5]);
        let (s, c) = phi.sin_cos();
        let num = self.gravity * s + u[0] * c + 2.0 * dsr * dphi;
        out[0] = 0.0;
        out[1] = vec[0];
        out[2] = vec[5] * num / (sr * sr);
        out[3] = vec[2] - vec[5] * 2.0 * dphi / sr;
        out[4] = -vec[5] * (self.gravity * c - u[0] * s) / sr;
        out[5] = vec[4] - vec[5] * 2.0 * dsr / sr;
    }

    fn dfdu_mult(&self, out: &mut [f64], _t: f64, x: &[f64], _u: &[f64], _p: &[f64], vec: &[f64]) {
        out[0] = vec[1] - vec[5] * x[4].cos() / x[2];
        out[1] = vec[3];
    }

    fn l(&self, _t: f64, x: &[f64], u: &[f64], _p: &[f64], des: &Setpoint) -> f64 {
        let sx: f64 = (0..6).map(|i| self.q[i] * (x[i] - des.x[i]).powi(2)).sum();
        let su: f64 = (0..2).map(|i| self.r[i] * (u[i] - des.u[i]).powi(2)).sum();
        sx + su
    }

    fn dldx(&self, out: &mut [f64], _t: f64, x: &[f64], _u: &[f64], _p: &[f64], des: &Setpoint) {
        for i in 0..6 {
            out[i] = 2.0 * self.q[i] * (x[i] - des.x[i]);
        }
    }

    fn dldu(&self, out: &mut [f64], _t: f64, _x: &[f64], u: &[f64], _p: &[f64], des: &Setpoint) {
        for i in 0..2 {
            out[i] = 2.0 * self.r[i] * (u[i] - des.u[i]);
        }
    }

    fn h(&self, out: &mut [f64], _t: f64, x: &[f64], _u: &[f64], _p: &[f64]) {
        out[0] = self.obstacle(x);
        out[1] = x[5] - self.dphi_max;
        out[2] = -x[5] - self.dphi_max;
    }

    fn dhdx_mult(&self, out: &mut [f64], _t: f64, x: &[f64], _u: &[f64], _p: &[f64], vec: &[f64]) {
        let (sr, phi) = (x[2], x[4]);
        let (s, c) = phi.sin_cos();
        let w = 2.0 * self.obstacle_curvature * Self::load_x(x);
        out.fill(0.0);
        out[0] = -w * vec[0];
        out[2] = (c - w * s) * vec[0];
        out[4] = (-s * sr - w * c * sr) * vec[0];
        out[5] = vec[1] - vec[2];
    }

    fn dhdu_mult(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64], _vec: &[f64]) {
        out.fill(0.0);
    }
}
