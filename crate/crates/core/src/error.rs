use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("received signal is identically zero")]
    ZeroSignal,

    #[error("prototype would alias after {downsample}-fold downsampling: band edge {edge:.4}/T exceeds 1/(2K T) = {limit:.4}/T (max rolloff {max_rolloff:.3})")]
    Aliasing {
        downsample: usize,
        edge: f64,
        limit: f64,
        max_rolloff: f64,
    },

    #[error("singular normal equations in least-squares design")]
    Singular,

    #[error("inconsistent configuration: {0}")]
    Inconsistent(String),

    #[error("tape replay mismatch: recorded loss {recorded:e}, replayed {replayed:e}")]
    ReplayMismatch { recorded: f64, replayed: f64 },

    #[error("digest mismatch: {context} (expected {expected}, found {found})")]
    DigestMismatch {
        context: String,
        expected: String,
        found: String,
    },

    #[error("malformed container: {0}")]
    Format(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn inconsistent(msg: impl Into<String>) -> Self {
        Error::Inconsistent(msg.into())
    }
}
