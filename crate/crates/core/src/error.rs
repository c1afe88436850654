use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two extents that must agree do not. `axis` names the offending axis.
    #[error("{op}: shape mismatch on {axis}: expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        axis: String,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },

    #[error("backward: {0}")]
    Autograd(String),

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    /// Malformed weight file; `offset` is the byte position where decoding stopped.
    #[error("weight file at byte offset {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("weights: {0}")]
    Weights(String),

    #[error("image: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn mismatch(
        op: &'static str,
        axis: impl Into<String>,
        expected: usize,
        actual: usize,
    ) -> Self {
        Error::ShapeMismatch {
            op,
            axis: axis.into(),
            expected,
            actual,
        }
    }
}
