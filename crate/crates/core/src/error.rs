//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor operation received operands with incompatible shapes.
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation was called in a state that does not permit it
    /// (e.g. a second backward pass on the same tape).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Configuration values are inconsistent or name unknown entities.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A requested mode does not support the operation.
    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    /// A sentence-embedding provider failed; names the offending sentence.
    #[error("embedding provider failed on {sentence:?}: {reason}")]
    Provider { sentence: String, reason: String },

    /// Input file could not be parsed; carries the location.
    #[error("parse error at {location}: {reason}")]
    Parse { location: String, reason: String },

    /// A checkpoint was written by an incompatible format version.
    #[error("incompatible checkpoint version {found} (supported: {supported})")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
