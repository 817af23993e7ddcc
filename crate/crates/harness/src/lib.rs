//! Scenario runner for the monitoring control plane. Scripts drive a
//! complete in-process plane over the simulated cloud, check quiescent
//! states and record per-request stage timings and operation counts.

pub mod report;
pub mod runner;
pub mod script;

use std::path::PathBuf;

use thiserror::Error;

pub use report::{Measure, RunReport, ScenarioReport};
pub use runner::{run_scenario, ClockMode, RunOptions, Runner};
pub use script::{Expect, ScenarioScript, Step};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid scenario: {0}")]
    Script(String),
    #[error("step {step} ({op}) failed: {reason}")]
    Step { step: usize, op: String, reason: String },
    #[error("assertion {label} failed at step {step}:\n{diff}")]
    Assertion { step: usize, label: String, diff: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
