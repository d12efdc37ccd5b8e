use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported constellation order {0} (expected 4, 16, 64 or 256)")]
    UnsupportedOrder(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("rank-deficient regressor matrix (rank {rank} of {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("tape does not belong to these parameters")]
    StaleTape,

    #[error("pilot pre-training did not reach SER {target} within {updates} updates")]
    PretrainBudget { target: f64, updates: usize },

    #[error("empty frame")]
    EmptyFrame,

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
