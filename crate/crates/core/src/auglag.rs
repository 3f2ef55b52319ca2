//! Augmented Lagrangian building blocks: the transformed inequality `h̄`,
//! augmented costs and their derivatives, multiplier and penalty updates and
//! the outer convergence test. The outer loop itself lives in [`crate::solver`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Result};
use crate::problem::{Problem, ProblemDims, Setpoint};
use crate::trajectory::{Grid, Trajectory};

/// `h̄ = max{h, −μ/c}` for a single component.
pub fn transform_inequality(h: f64, mu: f64, c: f64) -> f64 {
    h.max(-mu / c)
}

/// Multipliers and penalties of all four constraint classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierState {
    pub mu_g: Trajectory,
    pub c_g: Trajectory,
    pub mu_h: Trajectory,
    pub c_h: Trajectory,
    pub mu_gt: Vec<f64>,
    pub c_gt: Vec<f64>,
    pub mu_ht: Vec<f64>,
    pub c_ht: Vec<f64>,
}

/// Path multipliers and penalties at a single time instant.
#[derive(Debug, Clone, Copy)]
pub struct PathMult<'a> {
    pub mu_g: &'a [f64],
    pub c_g: &'a [f64],
    pub mu_h: &'a [f64],
    pub c_h: &'a [f64],
}

/// Terminal multipliers and penalties.
#[derive(Debug, Clone, Copy)]
pub struct TerminalMult<'a> {
    pub mu_gt: &'a [f64],
    pub c_gt: &'a [f64],
    pub mu_ht: &'a [f64],
    pub c_ht: &'a [f64],
}

/// Owned buffer for interpolated path multipliers.
#[derive(Debug, Clone)]
pub struct PathMultBuf {
    pub mu_g: Vec<f64>,
    pub c_g: Vec<f64>,
    pub mu_h: Vec<f64>,
    pub c_h: Vec<f64>,
}

impl PathMultBuf {
    pub fn as_mult(&self) -> PathMult<'_> {
        PathMult {
            mu_g: &self.mu_g,
            c_g: &self.c_g,
            mu_h: &self.mu_h,
            c_h: &self.c_h,
        }
    }
}

impl MultiplierState {
    /// Uniform initial multipliers `mu0` and penalties `c0` on `n` nodes.
    pub fn new(dims: &ProblemDims, n: usize, mu0: f64, c0: f64) -> Self {
        MultiplierState {
            mu_g: Trajectory::constant(n, &vec![mu0; dims.ng]),
            c_g: Trajectory::constant(n, &vec![c0; dims.ng]),
            // inequality multipliers are nonnegative
            mu_h: Trajectory::constant(n, &vec![mu0.max(0.0); dims.nh]),
            c_h: Trajectory::constant(n, &vec![c0; dims.nh]),
            mu_gt: vec![mu0; dims.ngt],
            c_gt: vec![c0; dims.ngt],
            mu_ht: vec![mu0.max(0.0); dims.nht],
            c_ht: vec![c0; dims.nht],
        }
    }

    pub fn at(&self, i: usize) -> PathMult<'_> {
        PathMult {
            mu_g: self.mu_g.row(i),
            c_g: self.c_g.row(i),
            mu_h: self.mu_h.row(i),
            c_h: self.c_h.row(i),
        }
    }

    pub fn buffer(&self) -> PathMultBuf {
        PathMultBuf {
            mu_g: vec![0.0; self.mu_g.dim()],
            c_g: vec![0.0; self.c_g.dim()],
            mu_h: vec![0.0; self.mu_h.dim()],
            c_h: vec![0.0; self.c_h.dim()],
        }
    }

    pub fn interpolate(&self, grid: &Grid, tau: f64, buf: &mut PathMultBuf) {
        self.mu_g.interpolate(grid, tau, &mut buf.mu_g);
        self.c_g.interpolate(grid, tau, &mut buf.c_g);
        self.mu_h.interpolate(grid, tau, &mut buf.mu_h);
        self.c_h.interpolate(grid, tau, &mut buf.c_h);
    }

    pub fn terminal(&self) -> TerminalMult<'_> {
        TerminalMult {
            mu_gt: &self.mu_gt,
            c_gt: &self.c_gt,
            mu_ht: &self.mu_ht,
            c_ht: &self.c_ht,
        }
    }

    /// Path quantities resampled at `τ + shift`; terminal ones carry over.
    pub fn resample(&self, from: &Grid, to: &Grid, shift: f64) -> Self {
        MultiplierState {
            mu_g: self.mu_g.resample(from, to, shift),
            c_g: self.c_g.resample(from, to, shift),
            mu_h: self.mu_h.resample(from, to, shift),
            c_h: self.c_h.resample(from, to, shift),
            ..self.clone()
        }
    }

    /// Penalties in `[c_min, c_max]`, equality multipliers in `[−μ_max, μ_max]`,
    /// inequality multipliers in `[0, μ_max]`.
    pub fn within_bounds(&self, c_min: f64, c_max: f64, mu_max: f64) -> bool {
        let pen = |v: &[f64]| v.iter().all(|&c| (c_min..=c_max).contains(&c));
        let eq = |v: &[f64]| v.iter().all(|&m| m.abs() <= mu_max);
        let ineq = |v: &[f64]| v.iter().all(|&m| (0.0..=mu_max).contains(&m));
        pen(self.c_g.as_slice())
            && pen(self.c_h.as_slice())
            && pen(&self.c_gt)
            && pen(&self.c_ht)
            && eq(self.mu_g.as_slice())
            && eq(&self.mu_gt)
            && ineq(self.mu_h.as_slice())
            && ineq(&self.mu_ht)
    }
}

/// Stored constraint values of one outer iteration: `g` and `h̄` on the grid
/// and at the end of the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub g: Trajectory,
    pub hbar: Trajectory,
    pub gt: Vec<f64>,
    pub hbar_t: Vec<f64>,
}

impl Residuals {
    pub fn empty(dims: &ProblemDims, n: usize) -> Self {
        Residuals {
            g: Trajectory::zeros(dims.ng, n),
            hbar: Trajectory::zeros(dims.nh, n),
            gt: vec![0.0; dims.ngt],
            hbar_t: vec![0.0; dims.nht],
        }
    }

    pub fn resample(&self, from: &Grid, to: &Grid, shift: f64) -> Self {
        Residuals {
            g: self.g.resample(from, to, shift),
            hbar: self.hbar.resample(from, to, shift),
            ..self.clone()
        }
    }

    /// `max_t ‖g‖∞`, or 0 without path equalities.
    pub fn max_path_eq(&self) -> f64 {
        self.g.as_slice().iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// `max_t max{h̄, 0}` over all components.
    pub fn max_path_ineq(&self) -> f64 {
        self.hbar.as_slice().iter().fold(0.0, |a, &v| a.max(v))
    }

    pub fn max_terminal_eq(&self) -> f64 {
        self.gt.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn max_terminal_ineq(&self) -> f64 {
        self.hbar_t.iter().fold(0.0, |a, &v| a.max(v))
    }
}

/// Evaluates augmented costs, the Hamiltonian and their partial derivatives
/// with reusable scratch buffers.
///
/// Path functions receive `τ ∈ [0, T]`; the user hooks see `t0 + τ`.
pub struct Evaluator<'a, P: ?Sized> {
    problem: &'a P,
    dims: ProblemDims,
    des: &'a Setpoint,
    t0: f64,
    g: Vec<f64>,
    h: Vec<f64>,
    gt: Vec<f64>,
    ht: Vec<f64>,
    /// effective multipliers `∂l̄/∂g`, `∂l̄/∂h`
    mg: Vec<f64>,
    mh: Vec<f64>,
    mgt: Vec<f64>,
    mht: Vec<f64>,
    fx: Vec<f64>,
    bx: Vec<f64>,
    bu: Vec<f64>,
    bp: Vec<f64>,
}

impl<'a, P: Problem + ?Sized> Evaluator<'a, P> {
    pub fn new(problem: &'a P, des: &'a Setpoint, t0: f64) -> Self {
        let d = problem.dims();
        Evaluator {
            problem,
            dims: d,
            des,
            t0,
            g: vec![0.0; d.ng],
            h: vec![0.0; d.nh],
            gt: vec![0.0; d.ngt],
            ht: vec![0.0; d.nht],
            mg: vec![0.0; d.ng],
            mh: vec![0.0; d.nh],
            mgt: vec![0.0; d.ngt],
            mht: vec![0.0; d.nht],
            fx: vec![0.0; d.nx],
            bx: vec![0.0; d.nx],
            bu: vec![0.0; d.nu],
            bp: vec![0.0; d.np],
        }
    }

    pub fn problem(&self) -> &'a P {
        self.problem
    }

    pub fn dims(&self) -> &ProblemDims {
        &self.dims
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn setpoint(&self) -> &'a Setpoint {
        self.des
    }

    /// Evaluates `g`, `h` and the effective multipliers
    /// `μ_g + c_g g` and `max{μ_h + c_h h, 0}`.
    fn path_constraints(&mut self, tau: f64, x: &[f64], u: &[f64], p: &[f64], m: &PathMult) {
        let t = self.t0 + tau;
        if self.dims.ng > 0 {
            self.problem.g(&mut self.g, t, x, u, p);
            for k in 0..self.dims.ng {
                self.mg[k] = m.mu_g[k] + m.c_g[k] * self.g[k];
            }
        }
        if self.dims.nh > 0 {
            self.problem.h(&mut self.h, t, x, u, p);
            for k in 0..self.dims.nh {
                self.mh[k] = (m.mu_h[k] + m.c_h[k] * self.h[k]).max(0.0);
            }
        }
    }

    fn terminal_constraints(&mut self, horizon: f64, x: &[f64], p: &[f64], m: &TerminalMult) {
        if self.dims.ngt > 0 {
            self.problem.gt(&mut self.gt, horizon, x, p);
            for k in 0..self.dims.ngt {
                self.mgt[k] = m.mu_gt[k] + m.c_gt[k] * self.gt[k];
            }
        }
        if self.dims.nht > 0 {
            self.problem.ht(&mut self.ht, horizon, x, p);
            for k in 0..self.dims.nht {
                self.mht[k] = (m.mu_ht[k] + m.c_ht[k] * self.ht[k]).max(0.0);
            }
        }
    }

    /// Writes `g` and `h̄` at one instant.
    pub fn path_residuals(
        &mut self,
        tau: f64,
        x: &[f64],
        u: &[f64],
        p: &[f64],
        m: &PathMult,
        g_out: &mut [f64],
        hbar_out: &mut [f64],
    ) {
        self.path_constraints(tau, x, u, p, m);
        g_out.copy_from_slice(&self.g);
        for k in 0..self.dims.nh {
            hbar_out[k] = transform_inequality(self.h[k], m.mu_h[k], m.c_h[k]);
        }
    }

    pub fn terminal_residuals(
        &mut self,
        horizon: f64,
        x: &[f64],
        p: &[f64],
        m: &TerminalMult,
        gt_out: &mut [f64],
        hbar_out: &mut [f64],
    ) {
        self.terminal_constraints(horizon, x, p, m);
        gt_out.copy_from_slice(&self.gt);
        for k in 0..self.dims.nht {
            hbar_out[k] = transform_inequality(self.ht[k], m.mu_ht[k], m.c_ht[k]);
        }
    }

    /// `l̄ = l + μ_gᵀg + ½‖g‖²_{C_g} + μ_hᵀh̄ + ½‖h̄‖²_{C_h}`.
    pub fn lbar(&mut self, tau: f64, x: &[f64], u: &[f64], p: &[f64], m: &PathMult) -> f64 {
        let mut val = self.problem.l(self.t0 + tau, x, u, p, self.des);
        if self.dims.ng + self.dims.nh > 0 {
            self.path_constraints(tau, x, u, p, m);
            for k in 0..self.dims.ng {
                val += self.g[k] * (m.mu_g[k] + 0.5 * m.c_g[k] * self.g[k]);
            }
            for k in 0..self.dims.nh {
                let hb = transform_inequality(self.h[k], m.mu_h[k], m.c_h[k]);
                val += hb * (m.mu_h[k] + 0.5 * m.c_h[k] * hb);
            }
        }
        val
    }

    /// `V̄ = V + μ_gTᵀg_T + ½‖g_T‖²_{C_gT} + μ_hTᵀh̄_T + ½‖h̄_T‖²_{C_hT}`.
    pub fn vbar(&mut self, horizon: f64, x: &[f64], p: &[f64], m: &TerminalMult) -> f64 {
        let mut val = self.problem.v(horizon, x, p, self.des);
        if self.dims.ngt + self.dims.nht > 0 {
            self.terminal_constraints(horizon, x, p, m);
            for k in 0..self.dims.ngt {
                val += self.gt[k] * (m.mu_gt[k] + 0.5 * m.c_gt[k] * self.gt[k]);
            }
            for k in 0..self.dims.nht {
                let hb = transform_inequality(self.ht[k], m.mu_ht[k], m.c_ht[k]);
                val += hb * (m.mu_ht[k] + 0.5 * m.c_ht[k] * hb);
            }
        }
        val
    }

    /// `H = l̄ + λᵀf`.
    pub fn hamiltonian(
        &mut self,
        tau: f64,
        x: &[f64],
        u: &[f64],
        p: &[f64],
        lam: &[f64],
        m: &PathMult,
    ) -> Result<f64> {
        let lb = self.lbar(tau, x, u, p, m);
        self.problem.f(&mut self.fx, self.t0 + tau, x, u, p);
        let val = lb + lam.iter().zip(&self.fx).map(|(a, b)| a * b).sum::<f64>();
        ensure_finite(&[val], "hamiltonian")?;
        Ok(val)
    }

    /// `H_x = l_x + (g_x)ᵀ m_g + (h_x)ᵀ m_h + (f_x)ᵀ λ`.
    pub fn h_x(
        &mut self,
        out: &mut [f64],
        tau: f64,
        x: &[f64],
        u: &[f64],
        p: &[f64],
        lam: &[f64],
        m: &PathMult,
    ) {
        let t = self.t0 + tau;
        self.problem.dldx(out, t, x, u, p, self.des);
        self.problem.dfdx_mult(&mut self.bx, t, x, u, p, lam);
        add(out, &self.bx);
        if self.dims.ng + self.dims.nh > 0 {
            self.path_constraints(tau, x, u, p, m);
            if self.dims.ng > 0 {
                self.problem.dgdx_mult(&mut self.bx, t, x, u, p, &self.mg);
                add(out, &self.bx);
            }
            if self.dims.nh > 0 {
                self.problem.dhdx_mult(&mut self.bx, t, x, u, p, &self.mh);
                add(out, &self.bx);
            }
        }
    }

    /// `H_u`, assembled like [`Self::h_x`].
    pub fn h_u(
        &mut self,
        out: &mut [f64],
        tau: f64,
        x: &[f64],
        u: &[f64],
        p: &[f64],
        lam: &[f64],
        m: &PathMult,
    ) {
        let t = self.t0 + tau;
        self.problem.dldu(out, t, x, u, p, self.des);
        self.problem.dfdu_mult(&mut self.bu, t, x, u, p, lam);
        add(out, &self.bu);
        if self.dims.ng + self.dims.nh > 0 {
            self.path_constraints(tau, x, u, p, m);
            if self.dims.ng > 0 {
                self.problem.dgdu_mult(&mut self.bu, t, x, u, p, &self.mg);
                add(out, &self.bu);
            }
            if self.dims.nh > 0 {
                self.problem.dhdu_mult(&mut self.bu, t, x, u, p, &self.mh);
                add(out, &self.bu);
            }
        }
    }

    /// `H_p`, assembled like [`Self::h_x`].
    pub fn h_p(
        &mut self,
        out: &mut [f64],
        tau: f64,
        x: &[f64],
        u: &[f64],
        p: &[f64],
        lam: &[f64],
        m: &PathMult,
    ) {
        let t = self.t0 + tau;
        self.problem.dldp(out, t, x, u, p, self.des);
        self.problem.dfdp_mult(&mut self.bp, t, x, u, p, lam);
        add(out, &self.bp);
        if self.dims.ng + self.dims.nh > 0 {
            self.path_constraints(tau, x, u, p, m);
            if self.dims.ng > 0 {
                self.problem.dgdp_mult(&mut self.bp, t, x, u, p, &self.mg);
                add(out, &self.bp);
            }
            if self.dims.nh > 0 {
                self.problem.dhdp_mult(&mut self.bp, t, x, u, p, &self.mh);
                add(out, &self.bp);
            }
        }
    }

    /// `V̄_x = V_x + (g_T,x)ᵀ m_gT + (h_T,x)ᵀ m_hT`.
    pub fn vbar_x(&mut self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], m: &TerminalMult) {
        self.problem.dvdx(out, horizon, x, p, self.des);
        if self.dims.ngt + self.dims.nht > 0 {
            self.terminal_constraints(horizon, x, p, m);
            if self.dims.ngt > 0 {
                self.problem.dgtdx_mult(&mut self.bx, horizon, x, p, &self.mgt);
                add(out, &self.bx);
            }
            if self.dims.nht > 0 {
                self.problem.dhtdx_mult(&mut self.bx, horizon, x, p, &self.mht);
                add(out, &self.bx);
            }
        }
    }

    /// `V̄_p = V_p + (g_T,p)ᵀ m_gT + (h_T,p)ᵀ m_hT`.
    pub fn vbar_p(&mut self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], m: &TerminalMult) {
        self.problem.dvdp(out, horizon, x, p, self.des);
        if self.dims.ngt + self.dims.nht > 0 {
            self.terminal_constraints(horizon, x, p, m);
            if self.dims.ngt > 0 {
                self.problem.dgtdp_mult(&mut self.bp, horizon, x, p, &self.mgt);
                add(out, &self.bp);
            }
            if self.dims.nht > 0 {
                self.problem.dhtdp_mult(&mut self.bp, horizon, x, p, &self.mht);
                add(out, &self.bp);
            }
        }
    }

    /// `V̄_T = V_T + g_T,Tᵀ m_gT + h_T,Tᵀ m_hT`.
    pub fn vbar_t(&mut self, horizon: f64, x: &[f64], p: &[f64], m: &TerminalMult) -> f64 {
        let mut val = self.problem.dvdt(horizon, x, p, self.des);
        if self.dims.ngt + self.dims.nht > 0 {
            self.terminal_constraints(horizon, x, p, m);
            if self.dims.ngt > 0 {
                val += self.problem.dgtdt_mult(horizon, x, p, &self.mgt);
            }
            if self.dims.nht > 0 {
                val += self.problem.dhtdt_mult(horizon, x, p, &self.mht);
            }
        }
        val
    }
}

fn add(out: &mut [f64], v: &[f64]) {
    out.iter_mut().zip(v).for_each(|(o, a)| *o += a);
}

/// Tuning of the multiplier and penalty updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateParams {
    /// damping `ρ ∈ [0, 1]`
    pub rho: f64,
    pub eps_rel_u: f64,
    pub mu_max: f64,
    pub beta_in: f64,
    pub beta_de: f64,
    pub gamma_in: f64,
    pub gamma_de: f64,
    pub c_min: f64,
    pub c_max: f64,
}

/// Multiplier update for an equality constraint component.
pub fn update_multiplier_eq(mu: f64, c: f64, g: f64, eps: f64, eta: f64, prm: &UpdateParams) -> f64 {
    let next = if g.abs() > eps && eta <= prm.eps_rel_u {
        mu + (1.0 - prm.rho) * c * g
    } else {
        mu
    };
    next.clamp(-prm.mu_max, prm.mu_max)
}

/// Penalty update for an equality constraint component.
pub fn update_penalty_eq(c: f64, g: f64, g_prev: f64, eps: f64, eta: f64, prm: &UpdateParams) -> f64 {
    let next = if g.abs() >= (prm.gamma_in * g_prev.abs()).max(eps) && eta <= prm.eps_rel_u {
        prm.beta_in * c
    } else if g.abs() <= prm.gamma_de * eps {
        prm.beta_de * c
    } else {
        c
    };
    next.clamp(prm.c_min, prm.c_max)
}

/// Multiplier update for an inequality constraint component, given `h̄`.
pub fn update_multiplier_ineq(mu: f64, c: f64, hbar: f64, eps: f64, eta: f64, prm: &UpdateParams) -> f64 {
    let next = if (hbar > eps && eta <= prm.eps_rel_u) || hbar < 0.0 {
        mu + (1.0 - prm.rho) * c * hbar
    } else {
        mu
    };
    next.clamp(0.0, prm.mu_max)
}

/// Penalty update for an inequality constraint component, given `h̄`.
pub fn update_penalty_ineq(c: f64, hbar: f64, hbar_prev: f64, eps: f64, eta: f64, prm: &UpdateParams) -> f64 {
    let next = if hbar >= (prm.gamma_in * hbar_prev).max(eps) && eta <= prm.eps_rel_u {
        prm.beta_in * c
    } else if hbar <= prm.gamma_de * eps {
        prm.beta_de * c
    } else {
        c
    };
    next.clamp(prm.c_min, prm.c_max)
}

/// Absolute tolerances per constraint component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintTolerances {
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    pub gt: Vec<f64>,
    pub ht: Vec<f64>,
}

impl ConstraintTolerances {
    /// Expands either a single value or one value per constraint, stacked as
    /// `[g, h, g_T, h_T]`.
    pub fn from_list(dims: &ProblemDims, list: &[f64]) -> Result<Self> {
        let total = dims.ng + dims.nh + dims.ngt + dims.nht;
        let all: Vec<f64> = match list.len() {
            1 => vec![list[0]; total],
            n if n == total => list.to_vec(),
            n => {
                return Err(crate::SolverError::InvalidInput(format!(
                    "ConstraintsAbsTol has {n} entries, expected 1 or {total}"
                )))
            }
        };
        let (g, rest) = all.split_at(dims.ng);
        let (h, rest) = rest.split_at(dims.nh);
        let (gt, ht) = rest.split_at(dims.ngt);
        Ok(ConstraintTolerances {
            g: g.to_vec(),
            h: h.to_vec(),
            gt: gt.to_vec(),
            ht: ht.to_vec(),
        })
    }
}

/// Applies all multiplier updates in place.
pub fn update_multipliers(
    mult: &mut MultiplierState,
    res: &Residuals,
    tol: &ConstraintTolerances,
    eta: f64,
    prm: &UpdateParams,
) {
    for i in 0..mult.mu_g.len() {
        for k in 0..mult.mu_g.dim() {
            let c = mult.c_g.row(i)[k];
            let mu = &mut mult.mu_g.row_mut(i)[k];
            *mu = update_multiplier_eq(*mu, c, res.g.row(i)[k], tol.g[k], eta, prm);
        }
        for k in 0..mult.mu_h.dim() {
            let c = mult.c_h.row(i)[k];
            let mu = &mut mult.mu_h.row_mut(i)[k];
            *mu = update_multiplier_ineq(*mu, c, res.hbar.row(i)[k], tol.h[k], eta, prm);
        }
    }
    for k in 0..mult.mu_gt.len() {
        mult.mu_gt[k] = update_multiplier_eq(mult.mu_gt[k], mult.c_gt[k], res.gt[k], tol.gt[k], eta, prm);
    }
    for k in 0..mult.mu_ht.len() {
        mult.mu_ht[k] =
            update_multiplier_ineq(mult.mu_ht[k], mult.c_ht[k], res.hbar_t[k], tol.ht[k], eta, prm);
    }
}

/// Applies all penalty updates in place, comparing against `prev` residuals.
pub fn update_penalties(
    mult: &mut MultiplierState,
    res: &Residuals,
    prev: &Residuals,
    tol: &ConstraintTolerances,
    eta: f64,
    prm: &UpdateParams,
) {
    for i in 0..mult.c_g.len() {
        for k in 0..mult.c_g.dim() {
            let c = &mut mult.c_g.row_mut(i)[k];
            *c = update_penalty_eq(*c, res.g.row(i)[k], prev.g.row(i)[k], tol.g[k], eta, prm);
        }
        for k in 0..mult.c_h.dim() {
            let c = &mut mult.c_h.row_mut(i)[k];
            *c = update_penalty_ineq(*c, res.hbar.row(i)[k], prev.hbar.row(i)[k], tol.h[k], eta, prm);
        }
    }
    for k in 0..mult.c_gt.len() {
        mult.c_gt[k] = update_penalty_eq(mult.c_gt[k], res.gt[k], prev.gt[k], tol.gt[k], eta, prm);
    }
    for k in 0..mult.c_ht.len() {
        mult.c_ht[k] = update_penalty_ineq(mult.c_ht[k], res.hbar_t[k], prev.hbar_t[k], tol.ht[k], eta, prm);
    }
}

/// Why the outer loop has not converged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NotConverged {
    TerminalEquality(usize),
    TerminalInequality(usize),
    PathEquality(usize),
    PathInequality(usize),
    InnerOptimality,
}

impl fmt::Display for NotConverged {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NotConverged::TerminalEquality(k) => write!(f, "terminal equality index {k}"),
            NotConverged::TerminalInequality(k) => write!(f, "terminal inequality index {k}"),
            NotConverged::PathEquality(k) => write!(f, "path equality index {k}"),
            NotConverged::PathInequality(k) => write!(f, "path inequality index {k}"),
            NotConverged::InnerOptimality => write!(f, "inner optimality"),
        }
    }
}

/// Outcome of the outer convergence test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvergenceStatus {
    Converged,
    NotConverged(NotConverged),
}

impl ConvergenceStatus {
    pub fn is_converged(&self) -> bool {
        matches!(self, ConvergenceStatus::Converged)
    }
}

impl fmt::Display for ConvergenceStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConvergenceStatus::Converged => write!(f, "converged"),
            ConvergenceStatus::NotConverged(reason) => write!(f, "not converged: {reason}"),
        }
    }
}

/// Terminal residuals first, then path residuals (maximum over the grid),
/// then `η ≤ ε_rel,c`. Absent constraint classes are skipped.
pub fn check_convergence(
    res: &Residuals,
    eta: f64,
    tol: &ConstraintTolerances,
    eps_rel_c: f64,
) -> ConvergenceStatus {
    use ConvergenceStatus::NotConverged as No;
    for (k, v) in res.gt.iter().enumerate() {
        if v.abs() > tol.gt[k] {
            return No(NotConverged::TerminalEquality(k));
        }
    }
    for (k, v) in res.hbar_t.iter().enumerate() {
        if v.max(0.0) > tol.ht[k] {
            return No(NotConverged::TerminalInequality(k));
        }
    }
    for k in 0..res.g.dim() {
        if res.g.rows().any(|r| r[k].abs() > tol.g[k]) {
            return No(NotConverged::PathEquality(k));
        }
    }
    for k in 0..res.hbar.dim() {
        if res.hbar.rows().any(|r| r[k].max(0.0) > tol.h[k]) {
            return No(NotConverged::PathInequality(k));
        }
    }
    if !(eta <= eps_rel_c) {
        return No(NotConverged::InnerOptimality);
    }
    ConvergenceStatus::Converged
}

/// Heuristic lower penalty bound: a fraction of the ratio between the cost
/// magnitude and the integrated squared constraint magnitude, floored.
pub fn estimate_penalty_min(cost: f64, constraint_sq_integral: f64, fraction: f64, floor: f64) -> f64 {
    if constraint_sq_integral > 0.0 && cost.is_finite() {
        (fraction * cost.abs() / constraint_sq_integral).max(floor)
    } else {
        floor
    }
}
