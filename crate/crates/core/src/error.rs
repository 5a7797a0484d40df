use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Input does not match the declared schema (missing column, bad roles).
    #[error("schema error: {0}")]
    Schema(String),

    /// A data value failed validation. `row` is the 1-based data row,
    /// not counting the header.
    #[error("validation error at row {row}: {msg}")]
    Validation { row: usize, msg: String },

    /// An argument violated an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Model fitting could not proceed (empty group, unsatisfiable input).
    #[error("fit error: {0}")]
    Fit(String),

    /// Iterative training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },

    /// A requested metric is undefined on the given data.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Bootstrap aggregation failed (too many replicate failures).
    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
