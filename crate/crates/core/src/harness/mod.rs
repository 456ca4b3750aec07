//! Reproducible experiments over the model, engine, and metrology layers:
//! configuration, scenario matrix, verification suite, CSV output.

pub mod config;
pub mod report;
pub mod run;
pub mod verify;

pub use config::{BenchConfig, ConfigError, CANONICAL_CONFIG, DEFAULT_SCENARIOS};
pub use report::{write_csv, write_trajectory_csv};
pub use run::{Bench, Determinism, ScenarioResult};
pub use verify::{verify, Status, VerifyItem, VerifyReport};
