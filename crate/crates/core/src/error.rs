use thiserror::Error;

/// Errors raised by the solver and its building blocks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    /// A hook or an integration produced a non-finite value.
    #[error("numerical failure in {context}: non-finite value at index {index}")]
    NumericalFailure { context: String, index: usize },

    /// The adaptive integrator could not meet its tolerance above the minimum step size.
    #[error("adaptive step size underflow at t = {t} (step {step:e} below minimum)")]
    StepUnderflow { t: f64, step: f64 },

    /// The problem definition failed validation.
    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    /// Inconsistent sizes or values passed to the solver.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Moving horizon estimation requested before the measurement buffer is full.
    #[error("insufficient data: {have} of {need} samples buffered")]
    InsufficientData { have: usize, need: usize },
}

impl SolverError {
    pub(crate) fn non_finite(context: impl Into<String>, index: usize) -> Self {
        SolverError::NumericalFailure {
            context: context.into(),
            index,
        }
    }

    /// Prefixes the context of a numerical failure, keeping other variants untouched.
    pub fn within(self, outer: impl std::fmt::Display) -> Self {
        match self {
            SolverError::NumericalFailure { context, index } => SolverError::NumericalFailure {
                context: format!("{outer}: {context}"),
                index,
            },
            other => other,
        }
    }
}

pub type Result<T, E = SolverError> = std::result::Result<T, E>;

/// Returns the index of the first non-finite entry, if any.
pub(crate) fn first_non_finite(values: &[f64]) -> Option<usize> {
    values.iter().position(|v| !v.is_finite())
}

pub(crate) fn ensure_finite(values: &[f64], context: &str) -> Result<()> {
    match first_non_finite(values) {
        Some(index) => Err(SolverError::non_finite(context, index)),
        None => Ok(()),
    }
}
