//! Continuously stirred tank reactor with the van de Vusse reaction scheme.
//! Time in hours; states `[c_A, c_B, T, T_C]`, inputs `[u1, u2]`.

use pgmpc::problem::{Bounds, HookSet, Problem, ProblemDims, Scaling, Setpoint};
use serde::Deserialize;

const DATA: &str = include_str!("../../data/cstr.toml");

/// Seconds per model time unit.
pub const SECONDS_PER_UNIT: f64 = 3600.0;

/// Stationary operating points `(x, u)`.
pub const OPERATING_POINTS: [([f64; 4], [f64; 2]); 2] = [
    ([2140.2105, 1090.3044, 114.1911, 112.9066], [14.19, -1113.5]),
    ([2009.4596, 1070.1356, 100.1089, 97.1788], [5.0, -2540.0]),
];

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CstrData {
    pub k10: f64,
    pub k20: f64,
    pub e1: f64,
    pub e2: f64,
    pub dh_ab: f64,
    pub dh_bc: f64,
    pub dh_ad: f64,
    pub rho: f64,
    pub cp: f64,
    pub kw: f64,
    pub ar: f64,
    pub vr: f64,
    pub mk: f64,
    pub cpk: f64,
    pub c_in: f64,
    pub t_in: f64,
    pub u_min: [f64; 2],
    pub u_max: [f64; 2],
    pub q: [f64; 4],
    pub r: [f64; 2],
    pub p: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cstr {
    pub data: CstrData,
    delta: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl Default for Cstr {
    fn default() -> Self {
        Cstr::new(toml::from_str(DATA).expect("bundled cstr.toml is valid"))
    }
}

impl Cstr {
    pub fn new(data: CstrData) -> Self {
        let d = &data;
        Cstr {
            delta: 1.0 / (d.rho * d.cp),
            alpha: d.kw * d.ar / (d.rho * d.cp * d.vr),
            beta: d.kw * d.ar / (d.mk * d.cpk),
            gamma: 1.0 / (d.mk * d.cpk),
            data,
        }
    }

    /// Input box, mapped to `[−1, 1]` internally.
    pub fn bounds(&self) -> Bounds {
        let d = &self.data;
        let scale: Vec<f64> = (0..2).map(|i| 0.5 * (d.u_max[i] - d.u_min[i])).collect();
        let offset: Vec<f64> = (0..2).map(|i| 0.5 * (d.u_max[i] + d.u_min[i])).collect();
        let scaling = Scaling {
            u_scale: scale,
            u_offset: offset,
            ..Scaling::identity(4, 2)
        };
        Bounds::unbounded(&self.dims())
            .with_controls(d.u_min.to_vec(), d.u_max.to_vec())
            .with_scaling(scaling)
    }

    /// `(k1, k2, dk1/dT, dk2/dT)`
    fn rates(&self, temp: f64) -> (f64, f64, f64, f64) {
        let d = &self.data;
        let tk = temp + 273.15;
        let k1 = d.k10 * (d.e1 / tk).exp();
        let k2 = d.k20 * (d.e2 / tk).exp();
        (k1, k2, -k1 * d.e1 / (tk * tk), -k2 * d.e2 / (tk * tk))
    }

    /// Row-major `∂f/∂x`.
    fn jacobian_x(&self, x: &[f64], u: &[f64]) -> [[f64; 4]; 4] {
        let d = &self.data;
        let (ca, cb, temp) = (x[0], x[1], x[2]);
        let (k1, k2, dk1, dk2) = self.rates(temp);
        [
            [-k1 - 2.0 * k2 * ca - u[0], 0.0, -dk1 * ca - dk2 * ca * ca, 0.0],
            [k1, -k1 - u[0], dk1 * (ca - cb), 0.0],
            [
                -self.delta * (k1 * d.dh_ab + 2.0 * k2 * ca * d.dh_ad),
                -self.delta * k1 * d.dh_bc,
                -self.delta * (dk1 * ca * d.dh_ab + dk1 * cb * d.dh_bc + dk2 * ca * ca * d.dh_ad)
                    - self.alpha
                    - u[0],
                self.alpha,
            ],
            [0.0, 0.0, self.beta, -self.beta],
        ]
    }
}

impl Problem for Cstr {
    fn dims(&self) -> ProblemDims {
        ProblemDims::new(4, 2)
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
    }

    fn f(&self, out: &mut [f64], _t: f64, x: &[f64], u: &[f64], _p: &[f64]) {
        let d = &self.data;
        let (ca, cb, temp, tc) = (x[0], x[1], x[2], x[3]);
        let (k1, k2, _, _) = self.rates(temp);
        out[0] = -k1 * ca - k2 * ca * ca + (d.c_in - ca) * u[0];
        out[1] = k1 * ca - k1 * cb - cb * u[0];
        out[2] = -self.delta * (k1 * ca * d.dh_ab + k1 * cb * d.dh_bc + k2 * ca * ca * d.dh_ad)
            + self.alpha * (tc - temp)
            + (d.t_in - temp) * u[0];
        out[3] = self.beta * (temp - tc) + self.gamma * u[1];
    }

    fn dfdx_mult(&self, out: &mut [f64], _t: f64, x: &[f64], u: &[f64], _p: &[f64], vec: &[f64]) {
        let jac = self.jacobian_x(x, u);
        for j in 0..4 {
            out[j] = (0..4).map(|i| jac[i][j] * vec[i]).sum();
        }
    }

    fn dfdu_mult(&self, out: &mut [f64], _t: f64, x: &[f64], _u: &[f64], _p: &[f64], vec: &[f64]) {
        let d = &self.data;
        out[0] = (d.c_in - x[0]) * vec[0] - x[1] * vec[1] + (d.t_in - x[2]) * vec[2];
        out[1] = self.gamma * vec[3];
    }

    fn l(&self, _t: f64, x: &[f64], u: &[f64], _p: &[f64], des: &Setpoint) -> f64 {
        let d = &self.data;
        let sx: f64 = (0..4).map(|i| d.q[i] * (x[i] - des.x[i]).powi(2)).sum();
        let su: f64 = (0..2).map(|i| d.r[i] * (u[i] - des.u[i]).powi(2)).sum();
        sx + su
    }

    fn dldx(&self, out: &mut [f64], _t: f64, x: &[f64], _u: &[f64], _p: &[f64], des: &Setpoint) {
        for i in 0..4 {
            out[i] = 2.0 * self.data.q[i] * (x[i] - des.x[i]);
        }
    }

    fn dldu(&self, out: &mut [f64], _t: f64, _x: &[f64], u: &[f64], _p: &[f64], des: &Setpoint) {
        for i in 0..2 {
            out[i] = 2.0 * self.data.r[i] * (u[i] - des.u[i]);
        }
    }

    fn v(&self, _horizon: f64, x: &[f64], _p: &[f64], des: &Setpoint) -> f64 {
        (0..4).map(|i| self.data.p[i] * (x[i] - des.x[i]).powi(2)).sum()
    }

    fn dvdx(&self, out: &mut [f64], _horizon: f64, x: &[f64], _p: &[f64], des: &Setpoint) {
        for i in 0..4 {
            out[i] = 2.0 * self.data.p[i] * (x[i] - des.x[i]);
        }
    }
}
