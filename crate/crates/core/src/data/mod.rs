//! Observed data, structural models, simulation and exact oracles.

mod dataset;
mod dgp;
pub mod oracle;

pub use dataset::{ColumnRole, LongitudinalDataset, RegimeSpec};
pub use dgp::{
    simulate_ground_truth, simulate_paper_dgp, DgpVariable, DiscreteDgp, Distribution, VarRole,
};
pub use oracle::{
    enumerate_joint, enumerate_joint_with_cap, exact_counterfactual_mean, exact_eif_inputs,
    exact_f_functional, exact_g_computation, ExactJoint,
};


use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("dataset has no rows")]
    Empty,
    #[error("sample size must be at least 1")]
    InvalidSampleSize,
    #[error("unknown column name {0:?}")]
    UnknownColumn(String),
    #[error("duplicate column {0:?}")]
    DuplicateColumn(String),
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("column {column} has {found} rows, expected {expected}")]
    RaggedColumn { column: String, expected: usize, found: usize },
    #[error("column {column} row {row}: non-finite value")]
    NonFinite { column: String, row: usize },
    #[error("column {column} row {row}: treatment must be 0 or 1")]
    NonBinaryTreatment { column: String, row: usize },
    #[error("row {row}: weight must be finite and nonnegative")]
    InvalidWeight { row: usize },
    #[error("weights sum to zero")]
    ZeroWeights,
    #[error("invalid column layout: {0}")]
    Layout(String),
    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("JSON line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(String),
    #[error("invalid regime: {0}")]
    InvalidRegime(String),
    #[error("regime has length {found} but the data have {expected} time points")]
    RegimeLength { expected: usize, found: usize },
    #[error("invalid DGP: {0}")]
    Dgp(String),
    #[error("unknown builtin DGP {0:?} (expected builtin:paper or builtin:toy-v1)")]
    UnknownBuiltin(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("variable {0} is not binary; exact enumeration needs Bernoulli variables")]
    NonBinary(String),
    #[error("{variables} binary variables exceed the enumeration cap of {cap} configurations")]
    TooLarge { variables: usize, cap: usize },
    #[error("exact oracle supports a single mediator per time point")]
    MultiComponentMediator,
    #[error("regime has length {found} but the model has {expected} time points")]
    RegimeLength { expected: usize, found: usize },
    #[error("positivity violation: {0}")]
    Positivity(String),
    #[error("unknown variable {0}")]
    UnknownVariable(String),
}
