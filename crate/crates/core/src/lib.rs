pub mod auglag;
pub mod error;
pub mod gradient;
pub mod integrators;
pub mod mpc;
pub mod options;
pub mod problem;
pub mod solver;
pub mod trajectory;

pub use error::{Result, SolverError};
