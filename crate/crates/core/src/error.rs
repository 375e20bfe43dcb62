//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by table parsing, model fitting, and interval construction.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data (bad table, bad restriction, bad config).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Structured-text parse failure (JSON/CSV tables, restriction specs).
    #[error("parse error: {0}")]
    Parse(String),

    /// An iterative solver exhausted its budget without meeting its tolerance.
    #[error("non-convergence: {0}")]
    NonConvergence(String),

    /// The model design matrix is rank deficient.
    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    /// A moment variance fell below the usable threshold.
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    /// No parameter satisfies the requested constraints.
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_) | Error::Parse(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
