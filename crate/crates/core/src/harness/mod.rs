//! Evaluation runs, comparison tables and persistence of their artifacts.

pub mod config;
pub mod metrics;
pub mod run;

pub use config::{EvalConfig, ExperimentConfig};
pub use metrics::{compute_metrics, default_horizons, pursuit_correct, Horizon, MetricsReport};
pub use run::{
    evaluate, evaluate_policy, held_out_suite, load_logs, load_policy, load_suite, read_logs_jsonl,
    run_table, save_logs, train_policy, write_logs_jsonl, EvalOutput, Policy, PolicyChoice,
    RunConfig, Table, TableRow,
};

use crate::policy::PolicyError;
use crate::world::WorldError;

/// Errors surfaced by runs, sorted into the classes the command line reports
/// with distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Format(_) => 3,
            HarnessError::Runtime(_) => 4,
        }
    }
}

impl From<PolicyError> for HarnessError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Config(_) => HarnessError::Config(e.to_string()),
            PolicyError::Format(_) | PolicyError::Dimension { .. } => {
                HarnessError::Format(e.to_string())
            }
            PolicyError::World(w) => w.into(),
            _ => HarnessError::Runtime(e.to_string()),
        }
    }
}

impl From<WorldError> for HarnessError {
    fn from(e: WorldError) -> Self {
        match e {
            WorldError::Format(_) => HarnessError::Format(e.to_string()),
            _ => HarnessError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}
