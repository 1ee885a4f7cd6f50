//! Monte Carlo study harness: scenarios, replications, metrics and reports.

mod config;
mod report;
mod run;
mod scenario;
mod svg;

use thiserror::Error;

pub use config::{MonteCarloConfig, ScenarioRef, Truth, TRUTH_N};
pub use report::{
    plot_from_csv, read_replicates, write_replicates, MetricRow, Replicate, StudyMetadata,
    StudyOutput, StudyReport, TruthRecord, METADATA_FILE, METRICS_FILE, REPLICATES_FILE,
};
pub use run::{aggregate, dataset_seed, resolve_truths, run_config, run_replicates, run_study};
pub use scenario::ScenarioSpec;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("study config, line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("invalid study config: {0}")]
    InvalidConfig(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error("{path}{}: {message}", line.map(|l| format!(", line {l}")).unwrap_or_default())]
    Csv { path: String, line: Option<u64>, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Stream(#[from] std::io::Error),
}
