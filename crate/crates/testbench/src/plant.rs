//! Simulated plant: the model integrated by an adaptive Dormand–Prince
//! scheme at tight tolerances, independent of the solver's integrator.

use pgmpc::integrators::{Dopri, Rk45Tolerances};
use pgmpc::problem::{MassMatrix, Problem};
use pgmpc::{Result, SolverError};

pub const PLANT_TOLERANCES: Rk45Tolerances = Rk45Tolerances {
    rel_tol: 1e-8,
    abs_tol: 1e-10,
    min_step: 1e-14,
};

pub struct Plant<P> {
    model: P,
    params: Vec<f64>,
    mass: Option<MassMatrix>,
    dopri: Dopri,
    h_hint: f64,
    tol: Rk45Tolerances,
}

impl<P: Problem> Plant<P> {
    pub fn new(model: P, params: Vec<f64>) -> Result<Self> {
        let nx = model.dims().nx;
        let mass = match model.mass_matrix() {
            Some(m) => Some(
                MassMatrix::factorize(&m, nx)
                    .ok_or_else(|| SolverError::InvalidProblem("singular mass matrix".into()))?,
            ),
            None => None,
        };
        Ok(Plant {
            model,
            params,
            mass,
            dopri: Dopri::new(nx),
            h_hint: f64::INFINITY,
            tol: PLANT_TOLERANCES,
        })
    }

    pub fn model(&self) -> &P {
        &self.model
    }

    /// Advances `x` from `t0` to `t0 + dt` under the control `u(t)`.
    pub fn advance_with(
        &mut self,
        t0: f64,
        dt: f64,
        x: &mut [f64],
        mut u: impl FnMut(f64, &mut [f64]),
    ) -> Result<()> {
        let mut uk = vec![0.0; self.model.dims().nu];
        let (model, params, mass) = (&self.model, &self.params, &self.mass);
        let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
            u(t, &mut uk);
            model.f(dy, t, y, &uk, params);
            if let Some(m) = mass {
                m.solve_in_place(dy);
            }
        };
        if !self.h_hint.is_finite() {
            self.h_hint = dt;
        }
        self.dopri.integrate(&mut rhs, t0, t0 + dt, x, &self.tol, &mut self.h_hint)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NumericalFailure { context: "plant state".into(), index: 0 });
        }
        Ok(())
    }

    /// Like [`Plant::advance`] but leaves the step size memory untouched, so
    /// sampling between control updates does not perturb the trajectory.
    pub fn sample(&mut self, t0: f64, dt: f64, x: &mut [f64], u: &[f64]) -> Result<()> {
        let hint = self.h_hint;
        let res = self.advance(t0, dt, x, u);
        self.h_hint = hint;
        res
    }

    /// Advances `x` over `dt` with `u` held constant.
    pub fn advance(&mut self, t0: f64, dt: f64, x: &mut [f64], u: &[f64]) -> Result<()> {
        self.advance_with(t0, dt, x, |_, out| out.copy_from_slice(u))
    }
}
