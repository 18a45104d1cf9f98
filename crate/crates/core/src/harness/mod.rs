//! Experiment orchestration: configuration files, initial-condition
//! families, scenario runners, and persisted CSV/JSON artifacts.

pub mod config;
pub mod ic;
pub mod output;
pub mod rng;
pub mod scenario;

pub use config::{parse_config, parse_config_with_overrides, ConfigError, RunConfig, ScenarioKind};
pub use ic::InitialConditionSpec;
pub use output::RunRecord;
pub use scenario::{convergence_study, run_scenario, HarnessError};
