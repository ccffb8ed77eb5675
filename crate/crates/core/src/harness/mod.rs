//! Scenario configuration, simulation and reporting.

pub mod compare;
pub mod config;
pub mod output;
pub mod sim;
pub mod verify;

pub use compare::{compare_strategies, ComparisonReport};
pub use config::{EstimationMode, Order, ScenarioConfig};
pub use sim::{run_scenario, SimTrace};
pub use verify::{verify, VerifyReport};
