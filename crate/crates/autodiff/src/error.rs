use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{op}: invalid argument: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got a tensor of {elems} elements")]
    NonScalarLoss { elems: usize },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Errors raised by the "SMNN" parameter checkpoint codec.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("malformed checkpoint header (bad magic)")]
    MalformedHeader,
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u32),
    #[error("truncated checkpoint payload")]
    Truncated,
    #[error("trailing bytes after checkpoint payload")]
    TrailingData,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
