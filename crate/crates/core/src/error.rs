use thiserror::Error;

/// Errors raised anywhere in the training and evaluation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {shapes}")]
    ShapeMismatch { op: &'static str, shapes: String },

    #[error("backward root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("non-finite value at coordinate {coordinate}: {value}")]
    NonFinite { coordinate: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate ranked list: remaining probability mass {mass} at position {position}")]
    DegenerateList { position: usize, mass: f64 },

    #[error("size guard: {what} is {actual}, limit is {limit}")]
    SizeGuard {
        what: &'static str,
        actual: usize,
        limit: usize,
    },

    #[error("stale candidate pool for query `{query}`: built at step {refresh_step}, now step {step}, refresh interval {interval}")]
    StalePool {
        query: String,
        refresh_step: u64,
        step: u64,
        interval: u64,
    },

    #[error("non-finite loss at step {step} (query `{query}`)")]
    NanLoss { step: u64, query: String },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: truncated at byte offset {offset}: {message}")]
    Truncated {
        path: String,
        offset: u64,
        message: String,
    },

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
