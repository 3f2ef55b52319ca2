//! Planar dual arm robot holding a common object: joint velocity inputs, a
//! closed kinematic chain as path equality and a terminal state equality.

use std::f64::consts::{FRAC_PI_2, PI};

use pgmpc::problem::{Bounds, HookSet, Problem, ProblemDims, Setpoint};

#[derive(Debug, Clone, PartialEq)]
pub struct DualArm {
    /// Link lengths, left arm first.
    pub a: [f64; 6],
    /// Horizontal offset of the right arm base.
    pub base_offset: f64,
    pub r: [f64; 6],
    pub u_max: f64,
    pub x_final: [f64; 6],
}

/// Start configuration; the closed chain holds here.
pub const X0: [f64; 6] = [-FRAC_PI_2, FRAC_PI_2, 0.0, -FRAC_PI_2, -FRAC_PI_2, 0.0];
pub const X_FINAL: [f64; 6] = [FRAC_PI_2, -FRAC_PI_2, 0.0, FRAC_PI_2, -3.0 * FRAC_PI_2, 0.0];

impl Default for DualArm {
    fn default() -> Self {
        DualArm {
            a: [1.0, 0.25, 0.25, 1.0, 0.25, 0.25],
            base_offset: 1.0,
            r: [1.0; 6],
            u_max: 1.0,
            x_final: X_FINAL,
        }
    }
}

impl DualArm {
    pub fn bounds(&self) -> Bounds {
        Bounds::unbounded(&self.dims()).with_controls(vec![-self.u_max; 6], vec![self.u_max; 6])
    }

    /// End effector pose `[x, y, θ]` of the arm with links `a` and joints `q`.
    fn pose(a: &[f64], q: &[f64], offset: f64) -> [f64; 3] {
        let (q1, q12, q123) = (q[0], q[0] + q[1], q[0] + q[1] + q[2]);
        [
            offset + a[0] * q1.cos() + a[1] * q12.cos() + a[2] * q123.cos(),
            a[0] * q1.sin() + a[1] * q12.sin() + a[2] * q123.sin(),
            q123,
        ]
    }

    /// `(∂pose/∂q)ᵀ v`
    fn pose_jac_t(a: &[f64], q: &[f64], v: &[f64], out: &mut [f64]) {
        let angles = [q[0], q[0] + q[1], q[0] + q[1] + q[2]];
        // joint k moves links k.. of the chain
        for k in 0..3 {
            let (mut dx, mut dy) = (0.0, 0.0);
            for (link, ang) in angles.iter().enumerate().skip(k) {
                dx -= a[link] * ang.sin();
                dy += a[link] * ang.cos();
            }
            out[k] = dx * v[0] + dy * v[1] + v[2];
        }
    }

    pub fn chain_residual(&self, x: &[f64]) -> [f64; 3] {
        let pl = Self::pose(&self.a[..3], &x[..3], 0.0);
        let pr = Self::pose(&self.a[3..], &x[3..], self.base_offset);
        [pl[0] - pr[0], pl[1] - pr[1], pl[2] - pr[2] - PI]
    }
}

impl Problem for DualArm {
    fn dims(&self) -> ProblemDims {
        ProblemDims::new(6, 6).with_path_constraints(3, 0).with_terminal_constraints(6, 0)
    }

    fn hooks(&self) -> HookSet {
        HookSet::F
            | HookSet::DFDX_MULT
            | HookSet::DFDU_MULT
            | HookSet::L
            | HookSet::DLDX
            | HookSet::DLDU
            | HookSet::G
            | HookSet::DGDX_MULT
            | HookSet::DGDU_MULT
            | HookSet::GT
            | HookSet::DGTDX_MULT
    }

    fn f(&self, out: &mut [f64], _t: f64, _x: &[f64], u: &[f64], _p: &[f64]) {
        out.copy_from_slice(u);
    }

    fn dfdx_mult(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64], _vec: &[f64]) {
        out.fill(0.0);
    }

    fn dfdu_mult(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64], vec: &[f64]) {
        out.copy_from_slice(vec);
    }

    fn l(&self, _t: f64, _x: &[f64], u: &[f64], _p: &[f64], _des: &Setpoint) -> f64 {
        0.5 * u.iter().zip(&self.r).map(|(v, r)| r * v * v).sum::<f64>()
    }

    fn dldx(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64], _des: &Setpoint) {
        out.fill(0.0);
    }

    fn dldu(&self, out: &mut [f64], _t: f64, _x: &[f64], u: &[f64], _p: &[f64], _des: &Setpoint) {
        for i in 0..6 {
            out[i] = self.r[i] * u[i];
        }
    }

    fn g(&self, out: &mut [f64], _t: f64, x: &[f64], _u: &[f64], _p: &[f64]) {
        out.copy_from_slice(&self.chain_residual(x));
    }

    fn dgdx_mult(&self, out: &mut [f64], _t: f64, x: &[f64], _u: &[f64], _p: &[f64], vec: &[f64]) {
        Self::pose_jac_t(&self.a[..3], &x[..3], vec, &mut out[..3]);
        Self::pose_jac_t(&self.a[3..], &x[3..], vec, &mut out[3..]);
        for o in &mut out[3..] {
            *o = -*o;
        }
    }

    fn dgdu_mult(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64], _vec: &[f64]) {
        out.fill(0.0);
    }

    fn gt(&self, out: &mut [f64], _horizon: f64, x: &[f64], _p: &[f64]) {
        for i in 0..6 {
            out[i] = x[i] - self.x_final[i];
        }
    }

    fn dgtdx_mult(&self, out: &mut [f64], _horizon: f64, _x: &[f64], _p: &[f64], vec: &[f64]) {
        out.copy_from_slice(vec);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_closes_at_start_and_goal() {
        let arm = DualArm::default();
        for x in [X0, X_FINAL] {
            let g = arm.chain_residual(&x);
            assert!(g.iter().all(|v| v.abs() < 1e-14), "{g:?}");
        }
    }

    #[test]
    fn unit_links_do_not_close_the_chain() {
        let arm = DualArm { a: [1.0; 6], ..DualArm::default() };
        let x = [FRAC_PI_2, -FRAC_PI_2, 0.0, -FRAC_PI_2, FRAC_PI_2, 0.0];
        let g = arm.chain_residual(&x);
        // left tip (2, 1, 0), right tip (3, −1, 0)
        let expected = [-1.0, 2.0, -PI];
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14, "{g:?}");
        }
    }

    #[test]
    fn limits_and_weights() {
        let arm = DualArm::default();
        assert_eq!(arm.u_max, 1.0);
        assert_eq!(arm.r, [1.0; 6]);
    }
}
