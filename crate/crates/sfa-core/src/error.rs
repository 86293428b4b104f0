//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by estimators, solvers and data handling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("zero-variance column `{0}`")]
    ZeroVariance(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("non-positive value at row {row} in column `{column}` (must be > 0 to take logs)")]
    NonPositiveValue { row: usize, column: String },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),

    #[error("degenerate cross-validation folds: {0}")]
    DegenerateFolds(String),

    #[error("selected support too large: {0}")]
    SupportTooLarge(String),

    #[error("missing coefficient `{0}`")]
    MissingCoefficient(String),

    #[error("missing standard errors: {0}")]
    MissingSe(String),

    #[error("too few observations per bin: {0}")]
    TooFewBins(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    ParseError {
        row: usize,
        column: String,
        message: String,
    },

    #[error("empty data: {0}")]
    EmptyData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
