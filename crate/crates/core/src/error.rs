use thiserror::Error;

/// Errors produced by model fitting, integration, and data handling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("covariance matrix is not positive definite (pivot {pivot} failed)")]
    NotPositiveDefinite { pivot: usize },

    #[error("column `{column}` is degenerate: {reason}")]
    DegenerateColumn { column: String, reason: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error at row {row}, column `{column}`: {reason}")]
    Data {
        row: usize,
        column: String,
        reason: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("optimization diverged: {0}")]
    Diverged(String),

    #[error("model file error: {0}")]
    ModelFile(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
