//! Benchmark problems, closed-loop simulation and metrics for `pgmpc`.

pub mod log;
pub mod plant;
pub mod problems;
pub mod run;
pub mod scenario;
pub mod scenarios;

pub use log::{RunMetrics, RunOutput, TrajectoryLog};
pub use run::RunError;
pub use scenario::{Scenario, ScenarioKind};
pub use scenarios::{find, Entry, BUILTIN};
