use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand extents do not fit the operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Input outside the mathematical domain of the operation (e.g. empty reduction).
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller violated an API precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Object used in a state that does not allow the call (e.g. tape already consumed).
    #[error("invalid state: {0}")]
    State(String),

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("training diverged at epoch {epoch}, sample {sample}: {message}")]
    Training {
        epoch: usize,
        sample: usize,
        message: String,
    },

    #[error("optimization failed at step {step}: {message}")]
    Optimization { step: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn parse(offset: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }

    /// True for failures caused by non-finite numbers during training or optimization.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Training { .. } | Error::Optimization { .. })
    }
}
