//! User-facing description of an optimal control problem.
//!
//! A problem is stated by implementing [`Problem`]: dimensions, the right-hand
//! side `f` of `M ẋ = f(x, u, p, t)`, integral and terminal costs, path and
//! terminal constraints and their derivatives. Jacobians of vector-valued
//! functions are only ever needed in transposed, multiplied form
//! (`(∂f/∂x)ᵀ v`), so that is what the hooks provide.
//!
//! Problem-specific constants live in the implementing type itself; the solver
//! never looks at them.

mod check;
mod finite_diff;
mod scaling;

use std::fmt;
use std::sync::Arc;

use bitflags::bitflags;
use nalgebra::{DMatrix, DVector, LU};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Result, SolverError};

pub use check::{check_derivatives, DerivativeReport, HookCheck, HookCheckOutcome, SamplePoint};
pub use finite_diff::FiniteDifference;
pub use scaling::{scale_to_internal, unscale_from_internal, ScaledProblem, Scaling};

/// Problem dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProblemDims {
    pub nx: usize,
    pub nu: usize,
    pub np: usize,
    pub ng: usize,
    pub nh: usize,
    pub ngt: usize,
    pub nht: usize,
}

impl ProblemDims {
    pub fn new(nx: usize, nu: usize) -> Self {
        ProblemDims {
            nx,
            nu,
            ..Default::default()
        }
    }

    pub fn with_params(mut self, np: usize) -> Self {
        self.np = np;
        self
    }

    pub fn with_path_constraints(mut self, ng: usize, nh: usize) -> Self {
        self.ng = ng;
        self.nh = nh;
        self
    }

    pub fn with_terminal_constraints(mut self, ngt: usize, nht: usize) -> Self {
        self.ngt = ngt;
        self.nht = nht;
        self
    }

    pub fn has_constraints(&self) -> bool {
        self.ng + self.nh + self.ngt + self.nht > 0
    }
}

bitflags! {
    /// The hooks a problem implements.
    ///
    /// Validation compares this set against what the dimensions and enabled
    /// optimization variables require.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
    pub struct HookSet: u32 {
        const F = 1 << 0;
        const DFDX_MULT = 1 << 1;
        const DFDU_MULT = 1 << 2;
        const DFDP_MULT = 1 << 3;
        const L = 1 << 4;
        const DLDX = 1 << 5;
        const DLDU = 1 << 6;
        const DLDP = 1 << 7;
        const V = 1 << 8;
        const DVDX = 1 << 9;
        const DVDP = 1 << 10;
        const DVDT = 1 << 11;
        const G = 1 << 12;
        const DGDX_MULT = 1 << 13;
        const DGDU_MULT = 1 << 14;
        const DGDP_MULT = 1 << 15;
        const H = 1 << 16;
        const DHDX_MULT = 1 << 17;
        const DHDU_MULT = 1 << 18;
        const DHDP_MULT = 1 << 19;
        const GT = 1 << 20;
        const DGTDX_MULT = 1 << 21;
        const DGTDP_MULT = 1 << 22;
        const DGTDT_MULT = 1 << 23;
        const HT = 1 << 24;
        const DHTDX_MULT = 1 << 25;
        const DHTDP_MULT = 1 << 26;
        const DHTDT_MULT = 1 << 27;

        const VALUES = Self::F.bits() | Self::L.bits() | Self::V.bits() | Self::G.bits()
            | Self::H.bits() | Self::GT.bits() | Self::HT.bits();
    }
}

const HOOK_NAMES: [(HookSet, &str); 28] = [
    (HookSet::F, "f"),
    (HookSet::DFDX_MULT, "dfdx_mult"),
    (HookSet::DFDU_MULT, "dfdu_mult"),
    (HookSet::DFDP_MULT, "dfdp_mult"),
    (HookSet::L, "l"),
    (HookSet::DLDX, "dldx"),
    (HookSet::DLDU, "dldu"),
    (HookSet::DLDP, "dldp"),
    (HookSet::V, "V"),
    (HookSet::DVDX, "dVdx"),
    (HookSet::DVDP, "dVdp"),
    (HookSet::DVDT, "dVdT"),
    (HookSet::G, "g"),
    (HookSet::DGDX_MULT, "dgdx_mult"),
    (HookSet::DGDU_MULT, "dgdu_mult"),
    (HookSet::DGDP_MULT, "dgdp_mult"),
    (HookSet::H, "h"),
    (HookSet::DHDX_MULT, "dhdx_mult"),
    (HookSet::DHDU_MULT, "dhdu_mult"),
    (HookSet::DHDP_MULT, "dhdp_mult"),
    (HookSet::GT, "gT"),
    (HookSet::DGTDX_MULT, "dgTdx_mult"),
    (HookSet::DGTDP_MULT, "dgTdp_mult"),
    (HookSet::DGTDT_MULT, "dgTdT_mult"),
    (HookSet::HT, "hT"),
    (HookSet::DHTDX_MULT, "dhTdx_mult"),
    (HookSet::DHTDP_MULT, "dhTdp_mult"),
    (HookSet::DHTDT_MULT, "dhTdT_mult"),
];

impl HookSet {
    /// Name of a single hook flag, as used in reports.
    pub fn hook_name(self) -> &'static str {
        HOOK_NAMES
            .iter()
            .find(|(flag, _)| *flag == self)
            .map(|(_, name)| *name)
            .unwrap_or("<multiple>")
    }

    /// Individual hooks contained in this set, in declaration order.
    pub fn hooks(self) -> impl Iterator<Item = HookSet> {
        HOOK_NAMES
            .iter()
            .map(|(flag, _)| *flag)
            .filter(move |flag| self.contains(*flag))
    }

    /// All value and derivative hooks implied by the given dimensions.
    pub fn required(dims: &ProblemDims, present: HookSet, free_end_time: bool) -> HookSet {
        let mut req = HookSet::F | HookSet::DFDX_MULT;
        if dims.nu > 0 {
            req |= HookSet::DFDU_MULT;
        }
        if dims.np > 0 {
            req |= HookSet::DFDP_MULT;
        }
        if present.contains(HookSet::L) {
            req |= HookSet::DLDX;
            if dims.nu > 0 {
                req |= HookSet::DLDU;
            }
            if dims.np > 0 {
                req |= HookSet::DLDP;
            }
        }
        if present.contains(HookSet::V) {
            req |= HookSet::DVDX;
            if dims.np > 0 {
                req |= HookSet::DVDP;
            }
            if free_end_time {
                req |= HookSet::DVDT;
            }
        }
        let mut path = |n: usize, value: HookSet, dx: HookSet, du: HookSet, dp: HookSet| {
            if n > 0 {
                req |= value | dx;
                if dims.nu > 0 {
                    req |= du;
                }
                if dims.np > 0 {
                    req |= dp;
                }
            }
        };
        path(dims.ng, HookSet::G, HookSet::DGDX_MULT, HookSet::DGDU_MULT, HookSet::DGDP_MULT);
        path(dims.nh, HookSet::H, HookSet::DHDX_MULT, HookSet::DHDU_MULT, HookSet::DHDP_MULT);
        let mut terminal = |n: usize, value: HookSet, dx: HookSet, dp: HookSet, dt: HookSet| {
            if n > 0 {
                req |= value | dx;
                if dims.np > 0 {
                    req |= dp;
                }
                if free_end_time {
                    req |= dt;
                }
            }
        };
        terminal(dims.ngt, HookSet::GT, HookSet::DGTDX_MULT, HookSet::DGTDP_MULT, HookSet::DGTDT_MULT);
        terminal(dims.nht, HookSet::HT, HookSet::DHTDX_MULT, HookSet::DHTDP_MULT, HookSet::DHTDT_MULT);
        req
    }
}

/// Desired setpoint handed to the cost hooks.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Setpoint {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl Setpoint {
    pub fn new(x: Vec<f64>, u: Vec<f64>) -> Self {
        Setpoint { x, u }
    }

    pub fn zeros(dims: &ProblemDims) -> Self {
        Setpoint {
            x: vec![0.0; dims.nx],
            u: vec![0.0; dims.nu],
        }
    }
}

/// Evaluation contract of an optimal control problem
///
/// ```text
/// min  V(x(T), p, T) + ∫ l(x, u, p, t) dt
/// s.t. M ẋ = f(x, u, p, t),  g = 0,  h ≤ 0,  g_T = 0,  h_T ≤ 0
///      u ∈ [u_min, u_max],  p ∈ [p_min, p_max],  T ∈ [T_min, T_max]
/// ```
///
/// Path hooks receive the absolute time `t`, terminal hooks the horizon
/// length `T`. Every `*_mult` hook returns a transposed Jacobian multiplied
/// by `vec`, e.g. `dfdx_mult` writes `(∂f/∂x)ᵀ vec`. Output slices are sized
/// by the caller and must be completely overwritten.
///
/// Hooks must be pure functions of their arguments.
#[allow(unused_variables)]
pub trait Problem: Send + Sync {
    fn dims(&self) -> ProblemDims;

    /// Hooks this problem implements; unimplemented hooks fall back to the
    /// zero defaults below and are reported by [`validate`] when required.
    fn hooks(&self) -> HookSet;

    /// Constant mass matrix in row-major order; `None` means identity.
    fn mass_matrix(&self) -> Option<Vec<f64>> {
        None
    }

    fn f(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64]);

    fn dfdx_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        out.fill(0.0);
    }
    fn dfdu_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        out.fill(0.0);
    }
    fn dfdp_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        out.fill(0.0);
    }

    fn l(&self, t: f64, x: &[f64], u: &[f64], p: &[f64], des: &Setpoint) -> f64 {
        0.0
    }
    fn dldx(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], des: &Setpoint) {
        out.fill(0.0);
    }
    fn dldu(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], des: &Setpoint) {
        out.fill(0.0);
    }
    fn dldp(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], des: &Setpoint) {
        out.fill(0.0);
    }

    fn v(&self, horizon: f64, x: &[f64], p: &[f64], des: &Setpoint) -> f64 {
        0.0
    }
    fn dvdx(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], des: &Setpoint) {
        out.fill(0.0);
    }
    fn dvdp(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], des: &Setpoint) {
        out.fill(0.0);
    }
    fn dvdt(&self, horizon: f64, x: &[f64], p: &[f64], des: &Setpoint) -> f64 {
        0.0
    }

    fn g(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64]) {
        out.fill(0.0);
    }
    fn dgdx_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        out.fill(0.0);
    }
    fn dgdu_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        out.fill(0.0);
    }
    fn dgdp_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        out.fill(0.0);
    }

    fn h(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64]) {
        out.fill(0.0);
    }
    fn dhdx_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        out.fill(0.0);
    }
    fn dhdu_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        out.fill(0.0);
    }
    fn dhdp_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        out.fill(0.0);
    }

    fn gt(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64]) {
        out.fill(0.0);
    }
    fn dgtdx_mult(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) {
        out.fill(0.0);
    }
    fn dgtdp_mult(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) {
        out.fill(0.0);
    }
    fn dgtdt_mult(&self, horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) -> f64 {
        0.0
    }

    fn ht(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64]) {
        out.fill(0.0);
    }
    fn dhtdx_mult(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) {
        out.fill(0.0);
    }
    fn dhtdp_mult(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) {
        out.fill(0.0);
    }
    fn dhtdt_mult(&self, horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) -> f64 {
        0.0
    }
}

macro_rules! forward_problem {
    ($($ptr:ty),*) => {$(
        impl<P: Problem + ?Sized> Problem for $ptr {
            fn dims(&self) -> ProblemDims { (**self).dims() }
            fn hooks(&self) -> HookSet { (**self).hooks() }
            fn mass_matrix(&self) -> Option<Vec<f64>> { (**self).mass_matrix() }
            fn f(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64]) { (**self).f(out, t, x, u, p) }
            fn dfdx_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) { (**self).dfdx_mult(out, t, x, u, p, vec) }
            fn dfdu_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) { (**self).dfdu_mult(out, t, x, u, p, vec) }
            fn dfdp_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) { (**self).dfdp_mult(out, t, x, u, p, vec) }
            fn l(&self, t: f64, x: &[f64], u: &[f64], p: &[f64], des: &Setpoint) -> f64 { (**self).l(t, x, u, p, des) }
            fn dldx(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], des: &Setpoint) { (**self).dldx(out, t, x, u, p, des) }
            fn dldu(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], des: &Setpoint) { (**self).dldu(out, t, x, u, p, des) }
            fn dldp(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], des: &Setpoint) { (**self).dldp(out, t, x, u, p, des) }
            fn v(&self, horizon: f64, x: &[f64], p: &[f64], des: &Setpoint) -> f64 { (**self).v(horizon, x, p, des) }
            fn dvdx(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], des: &Setpoint) { (**self).dvdx(out, horizon, x, p, des) }
            fn dvdp(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], des: &Setpoint) { (**self).dvdp(out, horizon, x, p, des) }
            fn dvdt(&self, horizon: f64, x: &[f64], p: &[f64], des: &Setpoint) -> f64 { (**self).dvdt(horizon, x, p, des) }
            fn g(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64]) { (**self).g(out, t, x, u, p) }
            fn dgdx_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) { (**self).dgdx_mult(out, t, x, u, p, vec) }
            fn dgdu_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) { (**self).dgdu_mult(out, t, x, u, p, vec) }
            fn dgdp_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) { (**self).dgdp_mult(out, t, x, u, p, vec) }
            fn h(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64]) { (**self).h(out, t, x, u, p) }
            fn dhdx_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) { (**self).dhdx_mult(out, t, x, u, p, vec) }
            fn dhdu_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) { (**self).dhdu_mult(out, t, x, u, p, vec) }
            fn dhdp_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) { (**self).dhdp_mult(out, t, x, u, p, vec) }
            fn gt(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64]) { (**self).gt(out, horizon, x, p) }
            fn dgtdx_mult(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) { (**self).dgtdx_mult(out, horizon, x, p, vec) }
            fn dgtdp_mult(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) { (**self).dgtdp_mult(out, horizon, x, p, vec) }
            fn dgtdt_mult(&self, horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) -> f64 { (**self).dgtdt_mult(horizon, x, p, vec) }
            fn ht(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64]) { (**self).ht(out, horizon, x, p) }
            fn dhtdx_mult(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) { (**self).dhtdx_mult(out, horizon, x, p, vec) }
            fn dhtdp_mult(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) { (**self).dhtdp_mult(out, horizon, x, p, vec) }
            fn dhtdt_mult(&self, horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) -> f64 { (**self).dhtdt_mult(horizon, x, p, vec) }
        }
    )*};
}

forward_problem!(&P, Box<P>, Arc<P>);

/// Box constraints on the optimization variables plus optional variable scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
    pub t_min: f64,
    pub t_max: f64,
    pub scaling: Scaling,
}

impl Bounds {
    /// Unbounded controls and parameters, `T ∈ [1e-6, 1e6]`, identity scaling.
    pub fn unbounded(dims: &ProblemDims) -> Self {
        Bounds {
            u_min: vec![f64::NEG_INFINITY; dims.nu],
            u_max: vec![f64::INFINITY; dims.nu],
            p_min: vec![f64::NEG_INFINITY; dims.np],
            p_max: vec![f64::INFINITY; dims.np],
            t_min: 1e-6,
            t_max: 1e6,
            scaling: Scaling::identity(dims.nx, dims.nu),
        }
    }

    pub fn with_controls(mut self, u_min: Vec<f64>, u_max: Vec<f64>) -> Self {
        self.u_min = u_min;
        self.u_max = u_max;
        self
    }

    pub fn with_params(mut self, p_min: Vec<f64>, p_max: Vec<f64>) -> Self {
        self.p_min = p_min;
        self.p_max = p_max;
        self
    }

    pub fn with_horizon(mut self, t_min: f64, t_max: f64) -> Self {
        self.t_min = t_min;
        self.t_max = t_max;
        self
    }

    pub fn with_scaling(mut self, scaling: Scaling) -> Self {
        self.scaling = scaling;
        self
    }
}

/// A single problem with a problem definition.
#[derive(Debug, Clone, PartialEq)]
pub enum Finding {
    MissingHook { hook: &'static str, derivative: bool },
    DimensionMismatch { what: String, expected: usize, found: usize },
    InvalidDims(String),
    SingularMassMatrix,
    InvertedBound { what: &'static str, index: usize },
    NonPositiveScale { what: &'static str, index: usize },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::MissingHook { hook, derivative: true } => {
                write!(f, "missing derivative hook {hook}")
            }
            Finding::MissingHook { hook, derivative: false } => write!(f, "missing hook {hook}"),
            Finding::DimensionMismatch { what, expected, found } => {
                write!(f, "dimension mismatch in {what}: expected {expected}, found {found}")
            }
            Finding::InvalidDims(msg) => write!(f, "invalid dimensions: {msg}"),
            Finding::SingularMassMatrix => write!(f, "mass matrix is singular"),
            Finding::InvertedBound { what, index } => {
                write!(f, "inverted {what} bound, index {index}")
            }
            Finding::NonPositiveScale { what, index } => {
                write!(f, "non-positive {what} scale, index {index}")
            }
        }
    }
}

/// Outcome of [`validate`]; the problem is usable iff it holds no findings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            let msg = self
                .findings
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; ");
            Err(SolverError::InvalidProblem(msg))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for finding in &self.findings {
            writeln!(f, "{finding}")?;
        }
        Ok(())
    }
}

/// Checks a problem for missing hooks, size mismatches, a singular mass matrix
/// and inconsistent bounds. End-time derivatives are not required here; see
/// [`validate_with`].
pub fn validate<P: Problem + ?Sized>(problem: &P, bounds: &Bounds) -> ValidationReport {
    validate_with(problem, bounds, false)
}

/// Like [`validate`], additionally requiring the end-time derivative hooks
/// when the horizon length is an optimization variable.
pub fn validate_with<P: Problem + ?Sized>(
    problem: &P,
    bounds: &Bounds,
    free_end_time: bool,
) -> ValidationReport {
    let dims = problem.dims();
    let mut findings = Vec::new();

    if dims.nx == 0 {
        findings.push(Finding::InvalidDims("Nx must be at least 1".into()));
    }
    if dims.nu == 0 && dims.np == 0 {
        findings.push(Finding::InvalidDims(
            "Nu = 0 requires parameters to optimize (Np > 0)".into(),
        ));
    }

    let present = problem.hooks();
    let required = HookSet::required(&dims, present, free_end_time);
    for hook in required.difference(present).hooks() {
        findings.push(Finding::MissingHook {
            hook: hook.hook_name(),
            derivative: !HookSet::VALUES.contains(hook),
        });
    }

    if let Some(m) = problem.mass_matrix() {
        if m.len() != dims.nx * dims.nx {
            findings.push(Finding::DimensionMismatch {
                what: "mass matrix".into(),
                expected: dims.nx * dims.nx,
                found: m.len(),
            });
        } else if MassMatrix::factorize(&m, dims.nx).is_none() {
            findings.push(Finding::SingularMassMatrix);
        }
    }

    let mut check_len = |what: &str, expected: usize, found: usize| {
        if expected != found {
            findings.push(Finding::DimensionMismatch {
                what: what.to_string(),
                expected,
                found,
            });
        }
    };
    check_len("u_min", dims.nu, bounds.u_min.len());
    check_len("u_max", dims.nu, bounds.u_max.len());
    check_len("p_min", dims.np, bounds.p_min.len());
    check_len("p_max", dims.np, bounds.p_max.len());
    check_len("x_scale", dims.nx, bounds.scaling.x_scale.len());
    check_len("x_offset", dims.nx, bounds.scaling.x_offset.len());
    check_len("u_scale", dims.nu, bounds.scaling.u_scale.len());
    check_len("u_offset", dims.nu, bounds.scaling.u_offset.len());

    for (index, (lo, hi)) in bounds.u_min.iter().zip(&bounds.u_max).enumerate() {
        if lo > hi {
            findings.push(Finding::InvertedBound { what: "control", index });
        }
    }
    for (index, (lo, hi)) in bounds.p_min.iter().zip(&bounds.p_max).enumerate() {
        if lo > hi {
            findings.push(Finding::InvertedBound { what: "parameter", index });
        }
    }
    if bounds.t_min > bounds.t_max {
        findings.push(Finding::InvertedBound { what: "horizon", index: 0 });
    }
    for (what, scale) in [("state", &bounds.scaling.x_scale), ("control", &bounds.scaling.u_scale)] {
        for (index, s) in scale.iter().enumerate() {
            if !(*s > 0.0) || !s.is_finite() {
                findings.push(Finding::NonPositiveScale { what, index });
            }
        }
    }

    ValidationReport { findings }
}

/// Evaluates the right-hand side `f` of `M ẋ = f`. The mass matrix is not applied.
pub fn eval_dynamics<P: Problem + ?Sized>(
    problem: &P,
    x: &[f64],
    u: &[f64],
    p: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; problem.dims().nx];
    problem.f(&mut out, t, x, u, p);
    ensure_finite(&out, "dynamics f")?;
    Ok(out)
}

/// LU factorization of a constant, invertible mass matrix.
#[derive(Debug, Clone)]
pub struct MassMatrix {
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lu_t: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl MassMatrix {
    /// Factorizes a row-major `n × n` matrix; `None` if it is singular.
    pub fn factorize(row_major: &[f64], n: usize) -> Option<Self> {
        let m = DMatrix::from_row_slice(n, n, row_major);
        let lu = m.clone().lu();
        if !lu.is_invertible() {
            return None;
        }
        // Reject numerically singular matrices as well.
        let diag_max = lu.u().diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let diag_min = lu.u().diagonal().iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        if diag_max == 0.0 || diag_min / diag_max < 1e-14 {
            return None;
        }
        let lu_t = m.transpose().lu();
        Some(MassMatrix { lu, lu_t })
    }

    /// Replaces `rhs` by `M⁻¹ rhs`.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let mut b = DVector::from_column_slice(rhs);
        self.lu.solve_mut(&mut b);
        rhs.copy_from_slice(b.as_slice());
    }

    /// Replaces `rhs` by `M⁻ᵀ rhs`.
    pub fn solve_transpose_in_place(&self, rhs: &mut [f64]) {
        let mut b = DVector::from_column_slice(rhs);
        self.lu_t.solve_mut(&mut b);
        rhs.copy_from_slice(b.as_slice());
    }
}

#[cfg(test)]
pub(crate) mod test_problems {
    use super::*;

    /// Single-axis ball-on-plate model with four state box constraints.
    #[derive(Clone)]
    pub struct BallOnPlate {
        pub q: [f64; 2],
        pub r: f64,
        pub p: [f64; 2],
        pub x_min: [f64; 2],
        pub x_max: [f64; 2],
    }

    impl Default for BallOnPlate {
        fn default() -> Self {
            BallOnPlate {
                q: [100.0, 10.0],
                r: 1.0,
                p: [100.0, 10.0],
                x_min: [-0.2, -0.1],
                x_max: [0.01, 0.1],
            }
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
        fn dfdx_mult(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64], v: &[f64]) {
            out[0] = 0.0;
            out[1] = v[0];
        }
        fn dfdu_mult(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64], v: &[f64]) {
            out[0] = -0.04 * v[0] - 7.01 * v[1];
        }
        fn l(&self, _t: f64, x: &[f64], u: &[f64], _p: &[f64], des: &Setpoint) -> f64 {
            0.5 * (self.q[0] * (x[0] - des.x[0]).powi(2)
                + self.q[1] * (x[1] - des.x[1]).powi(2)
                + self.r * (u[0] - des.u[0]).powi(2))
        }
        fn dldx(&self, out: &mut [f64], _t: f64, x: &[f64], _u: &[f64], _p: &[f64], des: &Setpoint) {
            out[0] = self.q[0] * (x[0] - des.x[0]);
            out[1] = self.q[1] * (x[1] - des.x[1]);
        }
        fn dldu(&self, out: &mut [f64], _t: f64, _x: &[f64], u: &[f64], _p: &[f64], des: &Setpoint) {
            out[0] = self.r * (u[0] - des.u[0]);
        }
        fn v(&self, _tf: f64, x: &[f64], _p: &[f64], des: &Setpoint) -> f64 {
            0.5 * (self.p[0] * (x[0] - des.x[0]).powi(2) + self.p[1] * (x[1] - des.x[1]).powi(2))
        }
        fn dvdx(&self, out: &mut [f64], _tf: f64, x: &[f64], _p: &[f64], des: &Setpoint) {
            out[0] = self.p[0] * (x[0] - des.x[0]);
            out[1] = self.p[1] * (x[1] - des.x[1]);
        }
        fn h(&self, out: &mut [f64], _t: f64, x: &[f64], _u: &[f64], _p: &[f64]) {
            out[0] = self.x_min[0] - x[0];
            out[1] = x[0] - self.x_max[0];
            out[2] = self.x_min[1] - x[1];
            out[3] = x[1] - self.x_max[1];
        }
        fn dhdx_mult(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64], v: &[f64]) {
            out[0] = -v[0] + v[1];
            out[1] = -v[2] + v[3];
        }
        fn dhdu_mult(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64], _v: &[f64]) {
            out[0] = 0.0;
        }
    }

    /// Scalar linear-quadratic problem `ẋ = a x + b u`, `l = ½(q x² + r u²)`,
    /// `V = ½ s x²`.
    #[derive(Clone)]
    pub struct ScalarLq {
        pub a: f64,
        pub b: f64,
        pub q: f64,
        pub r: f64,
        pub s: f64,
    }

    impl Problem for ScalarLq {
        fn dims(&self) -> ProblemDims {
            ProblemDims::new(1, 1)
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
        }
        fn f(&self, out: &mut [f64], _t: f64, x: &[f64], u: &[f64], _p: &[f64]) {
            out[0] = self.a * x[0] + self.b * u[0];
        }
        fn dfdx_mult(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64], v: &[f64]) {
            out[0] = self.a * v[0];
        }
        fn dfdu_mult(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64], v: &[f64]) {
            out[0] = self.b * v[0];
        }
        fn l(&self, _t: f64, x: &[f64], u: &[f64], _p: &[f64], _des: &Setpoint) -> f64 {
            0.5 * (self.q * x[0] * x[0] + self.r * u[0] * u[0])
        }
        fn dldx(&self, out: &mut [f64], _t: f64, x: &[f64], _u: &[f64], _p: &[f64], _des: &Setpoint) {
            out[0] = self.q * x[0];
        }
        fn dldu(&self, out: &mut [f64], _t: f64, _x: &[f64], u: &[f64], _p: &[f64], _des: &Setpoint) {
            out[0] = self.r * u[0];
        }
        fn v(&self, _tf: f64, x: &[f64], _p: &[f64], _des: &Setpoint) -> f64 {
            0.5 * self.s * x[0] * x[0]
        }
        fn dvdx(&self, out: &mut [f64], _tf: f64, x: &[f64], _p: &[f64], _des: &Setpoint) {
            out[0] = self.s * x[0];
        }
    }
}
