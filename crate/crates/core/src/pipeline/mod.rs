//! Scenario configuration, closed-loop simulation, outputs and suites.

pub mod output;
pub mod scenario;
pub mod sim;
pub mod fidelity;
pub mod suite;

pub use output::{emit_outputs, SdfSlice};
pub use scenario::{Arm, ScenarioConfig};
pub use sim::{run_scenario, HaltReason, RunMetrics, RunOutput, TrajectoryLog};
pub use suite::{run_suite, SuiteRow};
