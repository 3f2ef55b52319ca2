use serde::{Deserialize, Serialize};

use super::{HookSet, Problem, ProblemDims, Setpoint};

/// Affine scaling `x̃ = (x − offset) / scale` of states and controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub x_scale: Vec<f64>,
    pub x_offset: Vec<f64>,
    pub u_scale: Vec<f64>,
    pub u_offset: Vec<f64>,
}

impl Scaling {
    pub fn identity(nx: usize, nu: usize) -> Self {
        Scaling {
            x_scale: vec![1.0; nx],
            x_offset: vec![0.0; nx],
            u_scale: vec![1.0; nu],
            u_offset: vec![0.0; nu],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.x_identity() && self.u_identity()
    }

    fn x_identity(&self) -> bool {
        self.x_scale.iter().all(|&s| s == 1.0) && self.x_offset.iter().all(|&o| o == 0.0)
    }

    fn u_identity(&self) -> bool {
        self.u_scale.iter().all(|&s| s == 1.0) && self.u_offset.iter().all(|&o| o == 0.0)
    }

    pub fn scale_x(&self, x: &[f64]) -> Vec<f64> {
        scale_to_internal(x, &self.x_scale, &self.x_offset)
    }

    pub fn unscale_x(&self, x: &[f64]) -> Vec<f64> {
        unscale_from_internal(x, &self.x_scale, &self.x_offset)
    }

    pub fn scale_u(&self, u: &[f64]) -> Vec<f64> {
        scale_to_internal(u, &self.u_scale, &self.u_offset)
    }

    pub fn unscale_u(&self, u: &[f64]) -> Vec<f64> {
        unscale_from_internal(u, &self.u_scale, &self.u_offset)
    }
}

/// `(raw − offset) / scale`, componentwise.
pub fn scale_to_internal(raw: &[f64], scale: &[f64], offset: &[f64]) -> Vec<f64> {
    raw.iter()
        .zip(scale)
        .zip(offset)
        .map(|((r, s), o)| (r - o) / s)
        .collect()
}

/// `scale · internal + offset`, componentwise.
pub fn unscale_from_internal(internal: &[f64], scale: &[f64], offset: &[f64]) -> Vec<f64> {
    internal
        .iter()
        .zip(scale)
        .zip(offset)
        .map(|((v, s), o)| s * v + o)
        .collect()
}

/// Presents a problem in scaled state and control coordinates.
///
/// Constraints and costs keep their values; only their arguments and
/// gradients are transformed. Parameters and the setpoint are not scaled.
pub struct ScaledProblem<P> {
    inner: P,
    scaling: Scaling,
    identity: bool,
}

impl<P: Problem> ScaledProblem<P> {
    pub fn new(inner: P, scaling: Scaling) -> Self {
        let identity = scaling.is_identity();
        ScaledProblem {
            inner,
            scaling,
            identity,
        }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut P {
        &mut self.inner
    }

    pub fn scaling(&self) -> &Scaling {
        &self.scaling
    }

    fn x(&self, x: &[f64]) -> Vec<f64> {
        self.scaling.unscale_x(x)
    }

    fn u(&self, u: &[f64]) -> Vec<f64> {
        self.scaling.unscale_u(u)
    }

    /// `vec / x_scale`, mapping a multiplier of `f̃` to one of `f`.
    fn div_xs(&self, vec: &[f64]) -> Vec<f64> {
        vec.iter().zip(&self.scaling.x_scale).map(|(v, s)| v / s).collect()
    }

    fn mul_in_place(out: &mut [f64], scale: &[f64]) {
        out.iter_mut().zip(scale).for_each(|(o, s)| *o *= s);
    }
}

impl<P: Problem> Problem for ScaledProblem<P> {
    fn dims(&self) -> ProblemDims {
        self.inner.dims()
    }

    fn hooks(&self) -> HookSet {
        self.inner.hooks()
    }

    fn mass_matrix(&self) -> Option<Vec<f64>> {
        let mut m = self.inner.mass_matrix()?;
        if !self.identity {
            let n = self.scaling.x_scale.len();
            let xs = &self.scaling.x_scale;
            for i in 0..n {
                for j in 0..n {
                    m[i * n + j] *= xs[j] / xs[i];
                }
            }
        }
        Some(m)
    }

    fn f(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64]) {
        if self.identity {
            return self.inner.f(out, t, x, u, p);
        }
        self.inner.f(out, t, &self.x(x), &self.u(u), p);
        out.iter_mut().zip(&self.scaling.x_scale).for_each(|(o, s)| *o /= s);
    }

    fn dfdx_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        if self.identity {
            return self.inner.dfdx_mult(out, t, x, u, p, vec);
        }
        self.inner.dfdx_mult(out, t, &self.x(x), &self.u(u), p, &self.div_xs(vec));
        Self::mul_in_place(out, &self.scaling.x_scale);
    }

    fn dfdu_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        if self.identity {
            return self.inner.dfdu_mult(out, t, x, u, p, vec);
        }
        self.inner.dfdu_mult(out, t, &self.x(x), &self.u(u), p, &self.div_xs(vec));
        Self::mul_in_place(out, &self.scaling.u_scale);
    }

    fn dfdp_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        if self.identity {
            return self.inner.dfdp_mult(out, t, x, u, p, vec);
        }
        self.inner.dfdp_mult(out, t, &self.x(x), &self.u(u), p, &self.div_xs(vec));
    }

    fn l(&self, t: f64, x: &[f64], u: &[f64], p: &[f64], des: &Setpoint) -> f64 {
        if self.identity {
            return self.inner.l(t, x, u, p, des);
        }
        self.inner.l(t, &self.x(x), &self.u(u), p, des)
    }

    fn dldx(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], des: &Setpoint) {
        if self.identity {
            return self.inner.dldx(out, t, x, u, p, des);
        }
        self.inner.dldx(out, t, &self.x(x), &self.u(u), p, des);
        Self::mul_in_place(out, &self.scaling.x_scale);
    }

    fn dldu(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], des: &Setpoint) {
        if self.identity {
            return self.inner.dldu(out, t, x, u, p, des);
        }
        self.inner.dldu(out, t, &self.x(x), &self.u(u), p, des);
        Self::mul_in_place(out, &self.scaling.u_scale);
    }

    fn dldp(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], des: &Setpoint) {
        if self.identity {
            return self.inner.dldp(out, t, x, u, p, des);
        }
        self.inner.dldp(out, t, &self.x(x), &self.u(u), p, des);
    }

    fn v(&self, horizon: f64, x: &[f64], p: &[f64], des: &Setpoint) -> f64 {
        if self.identity {
            return self.inner.v(horizon, x, p, des);
        }
        self.inner.v(horizon, &self.x(x), p, des)
    }

    fn dvdx(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], des: &Setpoint) {
        if self.identity {
            return self.inner.dvdx(out, horizon, x, p, des);
        }
        self.inner.dvdx(out, horizon, &self.x(x), p, des);
        Self::mul_in_place(out, &self.scaling.x_scale);
    }

    fn dvdp(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], des: &Setpoint) {
        if self.identity {
            return self.inner.dvdp(out, horizon, x, p, des);
        }
        self.inner.dvdp(out, horizon, &self.x(x), p, des);
    }

    fn dvdt(&self, horizon: f64, x: &[f64], p: &[f64], des: &Setpoint) -> f64 {
        if self.identity {
            return self.inner.dvdt(horizon, x, p, des);
        }
        self.inner.dvdt(horizon, &self.x(x), p, des)
    }

    fn g(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64]) {
        if self.identity {
            return self.inner.g(out, t, x, u, p);
        }
        self.inner.g(out, t, &self.x(x), &self.u(u), p)
    }

    fn dgdx_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        if self.identity {
            return self.inner.dgdx_mult(out, t, x, u, p, vec);
        }
        self.inner.dgdx_mult(out, t, &self.x(x), &self.u(u), p, vec);
        Self::mul_in_place(out, &self.scaling.x_scale);
    }

    fn dgdu_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        if self.identity {
            return self.inner.dgdu_mult(out, t, x, u, p, vec);
        }
        self.inner.dgdu_mult(out, t, &self.x(x), &self.u(u), p, vec);
        Self::mul_in_place(out, &self.scaling.u_scale);
    }

    fn dgdp_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        if self.identity {
            return self.inner.dgdp_mult(out, t, x, u, p, vec);
        }
        self.inner.dgdp_mult(out, t, &self.x(x), &self.u(u), p, vec)
    }

    fn h(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64]) {
        if self.identity {
            return self.inner.h(out, t, x, u, p);
        }
        self.inner.h(out, t, &self.x(x), &self.u(u), p)
    }

    fn dhdx_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        if self.identity {
            return self.inner.dhdx_mult(out, t, x, u, p, vec);
        }
        self.inner.dhdx_mult(out, t, &self.x(x), &self.u(u), p, vec);
        Self::mul_in_place(out, &self.scaling.x_scale);
    }

    fn dhdu_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        if self.identity {
            return self.inner.dhdu_mult(out, t, x, u, p, vec);
        }
        self.inner.dhdu_mult(out, t, &self.x(x), &self.u(u), p, vec);
        Self::mul_in_place(out, &self.scaling.u_scale);
    }

    fn dhdp_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        if self.identity {
            return self.inner.dhdp_mult(out, t, x, u, p, vec);
        }
        self.inner.dhdp_mult(out, t, &self.x(x), &self.u(u), p, vec)
    }

    fn gt(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64]) {
        if self.identity {
            return self.inner.gt(out, horizon, x, p);
        }
        self.inner.gt(out, horizon, &self.x(x), p)
    }

    fn dgtdx_mult(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) {
        if self.identity {
            return self.inner.dgtdx_mult(out, horizon, x, p, vec);
        }
        self.inner.dgtdx_mult(out, horizon, &self.x(x), p, vec);
        Self::mul_in_place(out, &self.scaling.x_scale);
    }

    fn dgtdp_mult(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) {
        if self.identity {
            return self.inner.dgtdp_mult(out, horizon, x, p, vec);
        }
        self.inner.dgtdp_mult(out, horizon, &self.x(x), p, vec)
    }

    fn dgtdt_mult(&self, horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) -> f64 {
        if self.identity {
            return self.inner.dgtdt_mult(horizon, x, p, vec);
        }
        self.inner.dgtdt_mult(horizon, &self.x(x), p, vec)
    }

    fn ht(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64]) {
        if self.identity {
            return self.inner.ht(out, horizon, x, p);
        }
        self.inner.ht(out, horizon, &self.x(x), p)
    }

    fn dhtdx_mult(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) {
        if self.identity {
            return self.inner.dhtdx_mult(out, horizon, x, p, vec);
        }
        self.inner.dhtdx_mult(out, horizon, &self.x(x), p, vec);
        Self::mul_in_place(out, &self.scaling.x_scale);
    }

    fn dhtdp_mult(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) {
        if self.identity {
            return self.inner.dhtdp_mult(out, horizon, x, p, vec);
        }
        self.inner.dhtdp_mult(out, horizon, &self.x(x), p, vec)
    }

    fn dhtdt_mult(&self, horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) -> f64 {
        if self.identity {
            return self.inner.dhtdt_mult(horizon, x, p, vec);
        }
        self.inner.dhtdt_mult(horizon, &self.x(x), p, vec)
    }
}
