use thiserror::Error;

/// Errors raised by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("sample range {start}..{end} outside buffer of length {len}")]
    OutOfRange { start: i64, end: i64, len: usize },

    #[error("total noise-plus-interference variance must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("interference-aware rule requires ground-truth occupancy")]
    MissingGenie,

    #[error("user {0} already cancelled")]
    AlreadyCancelled(usize),

    #[error("empty batch")]
    EmptyBatch,

    #[error("insufficient trials: need at least {required}, got {actual}")]
    InsufficientTrials { required: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
