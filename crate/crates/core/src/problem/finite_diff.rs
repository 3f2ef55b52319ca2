use super::{HookSet, Problem, ProblemDims, Setpoint};

/// Supplies every derivative hook by central differences of the value hooks.
///
/// Meant for prototyping: each derivative costs `2n` extra value evaluations,
/// which rules it out for real-time use.
pub struct FiniteDifference<P> {
    inner: P,
}

impl<P: Problem> FiniteDifference<P> {
    pub fn new(inner: P) -> Self {
        FiniteDifference { inner }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    /// Always false; derivative evaluations scale with the problem size.
    pub fn is_real_time_capable(&self) -> bool {
        false
    }
}

fn step(z: f64) -> f64 {
    // cube root of machine epsilon, relative to the magnitude
    6.055e-6 * z.abs().max(1.0)
}

/// Central-difference gradient of `phi` at `z`, written to `out`.
pub(crate) fn central_gradient(out: &mut [f64], z: &[f64], mut phi: impl FnMut(&[f64]) -> f64) {
    let mut work = z.to_vec();
    for i in 0..z.len() {
        let h = step(z[i]);
        work[i] = z[i] + h;
        let fp = phi(&work);
        work[i] = z[i] - h;
        let fm = phi(&work);
        work[i] = z[i];
        out[i] = (fp - fm) / (2.0 * h);
    }
}

pub(crate) fn central_derivative(z: f64, mut phi: impl FnMut(f64) -> f64) -> f64 {
    let h = step(z);
    (phi(z + h) - phi(z - h)) / (2.0 * h)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl<P: Problem> FiniteDifference<P> {
    fn path_mult(
        &self,
        n: usize,
        value: impl Fn(&mut [f64], f64, &[f64], &[f64], &[f64]),
        wrt: Wrt,
        out: &mut [f64],
        t: f64,
        x: &[f64],
        u: &[f64],
        p: &[f64],
        vec: &[f64],
    ) {
        let mut buf = vec![0.0; n];
        match wrt {
            Wrt::X => central_gradient(out, x, |z| {
                value(&mut buf, t, z, u, p);
                dot(&buf, vec)
            }),
            Wrt::U => central_gradient(out, u, |z| {
                value(&mut buf, t, x, z, p);
                dot(&buf, vec)
            }),
            Wrt::P => central_gradient(out, p, |z| {
                value(&mut buf, t, x, u, z);
                dot(&buf, vec)
            }),
        }
    }

    fn terminal_mult(
        &self,
        n: usize,
        value: impl Fn(&mut [f64], f64, &[f64], &[f64]),
        wrt: Wrt,
        out: &mut [f64],
        horizon: f64,
        x: &[f64],
        p: &[f64],
        vec: &[f64],
    ) {
        let mut buf = vec![0.0; n];
        match wrt {
            Wrt::X => central_gradient(out, x, |z| {
                value(&mut buf, horizon, z, p);
                dot(&buf, vec)
            }),
            Wrt::P => central_gradient(out, p, |z| {
                value(&mut buf, horizon, x, z);
                dot(&buf, vec)
            }),
            Wrt::U => unreachable!("terminal functions do not depend on u"),
        }
    }

    fn terminal_dt(
        &self,
        n: usize,
        value: impl Fn(&mut [f64], f64, &[f64], &[f64]),
        horizon: f64,
        x: &[f64],
        p: &[f64],
        vec: &[f64],
    ) -> f64 {
        let mut buf = vec![0.0; n];
        central_derivative(horizon, |tf| {
            value(&mut buf, tf, x, p);
            dot(&buf, vec)
        })
    }
}

#[derive(Clone, Copy)]
enum Wrt {
    X,
    U,
    P,
}

impl<P: Problem> Problem for FiniteDifference<P> {
    fn dims(&self) -> ProblemDims {
        self.inner.dims()
    }

    fn hooks(&self) -> HookSet {
        let values = self.inner.hooks() & HookSet::VALUES;
        let mut hooks = values | HookSet::DFDX_MULT | HookSet::DFDU_MULT | HookSet::DFDP_MULT;
        if values.contains(HookSet::L) {
            hooks |= HookSet::DLDX | HookSet::DLDU | HookSet::DLDP;
        }
        if values.contains(HookSet::V) {
            hooks |= HookSet::DVDX | HookSet::DVDP | HookSet::DVDT;
        }
        if values.contains(HookSet::G) {
            hooks |= HookSet::DGDX_MULT | HookSet::DGDU_MULT | HookSet::DGDP_MULT;
        }
        if values.contains(HookSet::H) {
            hooks |= HookSet::DHDX_MULT | HookSet::DHDU_MULT | HookSet::DHDP_MULT;
        }
        if values.contains(HookSet::GT) {
            hooks |= HookSet::DGTDX_MULT | HookSet::DGTDP_MULT | HookSet::DGTDT_MULT;
        }
        if values.contains(HookSet::HT) {
            hooks |= HookSet::DHTDX_MULT | HookSet::DHTDP_MULT | HookSet::DHTDT_MULT;
        }
        hooks
    }

    fn mass_matrix(&self) -> Option<Vec<f64>> {
        self.inner.mass_matrix()
    }

    fn f(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64]) {
        self.inner.f(out, t, x, u, p)
    }

    fn dfdx_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        let n = self.dims().nx;
        self.path_mult(n, |o, t, x, u, p| self.inner.f(o, t, x, u, p), Wrt::X, out, t, x, u, p, vec)
    }

    fn dfdu_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        let n = self.dims().nx;
        self.path_mult(n, |o, t, x, u, p| self.inner.f(o, t, x, u, p), Wrt::U, out, t, x, u, p, vec)
    }

    fn dfdp_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        let n = self.dims().nx;
        self.path_mult(n, |o, t, x, u, p| self.inner.f(o, t, x, u, p), Wrt::P, out, t, x, u, p, vec)
    }

    fn l(&self, t: f64, x: &[f64], u: &[f64], p: &[f64], des: &Setpoint) -> f64 {
        self.inner.l(t, x, u, p, des)
    }

    fn dldx(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], des: &Setpoint) {
        central_gradient(out, x, |z| self.inner.l(t, z, u, p, des))
    }

    fn dldu(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], des: &Setpoint) {
        central_gradient(out, u, |z| self.inner.l(t, x, z, p, des))
    }

    fn dldp(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], des: &Setpoint) {
        central_gradient(out, p, |z| self.inner.l(t, x, u, z, des))
    }

    fn v(&self, horizon: f64, x: &[f64], p: &[f64], des: &Setpoint) -> f64 {
        self.inner.v(horizon, x, p, des)
    }

    fn dvdx(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], des: &Setpoint) {
        central_gradient(out, x, |z| self.inner.v(horizon, z, p, des))
    }

    fn dvdp(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], des: &Setpoint) {
        central_gradient(out, p, |z| self.inner.v(horizon, x, z, des))
    }

    fn dvdt(&self, horizon: f64, x: &[f64], p: &[f64], des: &Setpoint) -> f64 {
        central_derivative(horizon, |tf| self.inner.v(tf, x, p, des))
    }

    fn g(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64]) {
        self.inner.g(out, t, x, u, p)
    }

    fn dgdx_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        let n = self.dims().ng;
        self.path_mult(n, |o, t, x, u, p| self.inner.g(o, t, x, u, p), Wrt::X, out, t, x, u, p, vec)
    }

    fn dgdu_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        let n = self.dims().ng;
        self.path_mult(n, |o, t, x, u, p| self.inner.g(o, t, x, u, p), Wrt::U, out, t, x, u, p, vec)
    }

    fn dgdp_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        let n = self.dims().ng;
        self.path_mult(n, |o, t, x, u, p| self.inner.g(o, t, x, u, p), Wrt::P, out, t, x, u, p, vec)
    }

    fn h(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64]) {
        self.inner.h(out, t, x, u, p)
    }

    fn dhdx_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        let n = self.dims().nh;
        self.path_mult(n, |o, t, x, u, p| self.inner.h(o, t, x, u, p), Wrt::X, out, t, x, u, p, vec)
    }

    fn dhdu_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        let n = self.dims().nh;
        self.path_mult(n, |o, t, x, u, p| self.inner.h(o, t, x, u, p), Wrt::U, out, t, x, u, p, vec)
    }

    fn dhdp_mult(&self, out: &mut [f64], t: f64, x: &[f64], u: &[f64], p: &[f64], vec: &[f64]) {
        let n = self.dims().nh;
        self.path_mult(n, |o, t, x, u, p| self.inner.h(o, t, x, u, p), Wrt::P, out, t, x, u, p, vec)
    }

    fn gt(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64]) {
        self.inner.gt(out, horizon, x, p)
    }

    fn dgtdx_mult(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) {
        let n = self.dims().ngt;
        self.terminal_mult(n, |o, tf, x, p| self.inner.gt(o, tf, x, p), Wrt::X, out, horizon, x, p, vec)
    }

    fn dgtdp_mult(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) {
        let n = self.dims().ngt;
        self.terminal_mult(n, |o, tf, x, p| self.inner.gt(o, tf, x, p), Wrt::P, out, horizon, x, p, vec)
    }

    fn dgtdt_mult(&self, horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) -> f64 {
        let n = self.dims().ngt;
        self.terminal_dt(n, |o, tf, x, p| self.inner.gt(o, tf, x, p), horizon, x, p, vec)
    }

    fn ht(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64]) {
        self.inner.ht(out, horizon, x, p)
    }

    fn dhtdx_mult(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) {
        let n = self.dims().nht;
        self.terminal_mult(n, |o, tf, x, p| self.inner.ht(o, tf, x, p), Wrt::X, out, horizon, x, p, vec)
    }

    fn dhtdp_mult(&self, out: &mut [f64], horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) {
        let n = self.dims().nht;
        self.terminal_mult(n, |o, tf, x, p| self.inner.ht(o, tf, x, p), Wrt::P, out, horizon, x, p, vec)
    }

    fn dhtdt_mult(&self, horizon: f64, x: &[f64], p: &[f64], vec: &[f64]) -> f64 {
        let n = self.dims().nht;
        self.terminal_dt(n, |o, tf, x, p| self.inner.ht(o, tf, x, p), horizon, x, p, vec)
    }
}
