//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {context}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        context: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver did not converge: {context}: residual {residual:.3e} after {iterations} iterations")]
    SolverDiverged {
        context: &'static str,
        residual: f64,
        iterations: usize,
    },

    #[error("training diverged: loss {loss:.3e} exceeded {limit:.3e} at epoch {epoch}")]
    TrainingDiverged { loss: f64, limit: f64, epoch: usize },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("checksum mismatch: manifest {expected:016x}, payload {found:016x}")]
    ChecksumMismatch { expected: u64, found: u64 },

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("missing file: {0}")]
    MissingFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
