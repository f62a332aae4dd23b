//! Experiment harness around `fpf-core`: JSON scenario files, filter runs
//! with CSV/JSON persistence, refinement studies, seed sweeps, and the
//! invariant verifier behind the `fpf-lab` CLI.

use std::fmt;

pub mod config;
pub mod metrics;
pub mod runner;

pub use config::{load_scenario, parse_scenario, ConfigError, ScenarioFile};
pub use metrics::{compare_distributions, DistanceReport};

/// Harness-level failure, split by exit code: config errors exit 2,
/// everything else exits 3.
#[derive(Debug)]
pub enum LabError {
    Config(ConfigError),
    Numeric(String),
    Io(String),
}

impl fmt::Display for LabError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabError::Config(e) => write!(f, "{e}"),
            LabError::Numeric(msg) => write!(f, "numeric failure: {msg}"),
            LabError::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for LabError {}

impl From<ConfigError> for LabError {
    fn from(e: ConfigError) -> Self {
        LabError::Config(e)
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

impl LabError {
    /// The process exit code this failure maps to.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 2,
            _ => 3,
        }
    }
}
