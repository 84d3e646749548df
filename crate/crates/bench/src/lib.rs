//! Scenario harness for splatloc: configuration, end-to-end runs, metrics,
//! sweeps and rank correlations.

pub mod config;
pub mod correlation;
pub mod metrics;
pub mod runner;
pub mod sweep;

use thiserror::Error;

pub use config::ScenarioConfig;
pub use metrics::MetricsReport;
pub use runner::{prepare, run_scenario, QueryRecord, ScenarioRun};

/// Overrides the output directory when no `--out` flag is given.
pub const OUT_DIR_ENV: &str = "SPLATLOC_OUT_DIR";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("scene i/o error: {0}")]
    SceneIo(String),
    #[error("need at least {needed} successful queries, got {got}")]
    InsufficientData { got: usize, needed: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl BenchError {
    /// Process exit code: 2 for configuration problems, 3 for scene I/O,
    /// 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::SceneIo(_) => 3,
            _ => 1,
        }
    }
}
