use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("row {row}: {reason}")]
    InvalidRecord { row: usize, reason: String },

    #[error("column `{column}` has zero variance and cannot be standardized")]
    ZeroVariance { column: String },

    #[error("column `{column}` has no observed values")]
    EmptyColumn { column: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stratum {stratum} is not feasible for observed group {group}")]
    InfeasibleStratum { stratum: String, group: String },

    #[error("no missingness model for stratum {stratum} under arm z={arm}")]
    InvalidMissingCell { stratum: String, arm: u8 },

    #[error("no outcome model for stratum {0}")]
    NoOutcomeModel(String),

    #[error("covariates are collinear on the risk sets; Cox information matrix is singular")]
    Collinear,

    #[error("Cox model did not converge: {0}")]
    CoxNotConverged(String),

    #[error("non-finite value in block `{block}` at iteration {iteration}")]
    NonFinite { iteration: usize, block: String },

    #[error("non-finite deviance at draw {draw}")]
    NonFiniteDeviance { draw: usize },

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema(_)
            | Error::InvalidRecord { .. }
            | Error::ZeroVariance { .. }
            | Error::EmptyColumn { .. }
            | Error::DimensionMismatch { .. }
            | Error::Config(_)
            | Error::InfeasibleStratum { .. }
            | Error::InvalidMissingCell { .. }
            | Error::NoOutcomeModel(_)
            | Error::Parse { .. }
            | Error::Insufficient(_)
            | Error::Csv(_)
            | Error::Json(_) => 2,
            Error::Collinear
            | Error::CoxNotConverged(_)
            | Error::NonFinite { .. }
            | Error::NonFiniteDeviance { .. }
            | Error::NotPositiveDefinite(_) => 3,
            Error::Io(_) => 1,
        }
    }
}
