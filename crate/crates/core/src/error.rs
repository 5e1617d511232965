use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the adaptation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Malformed feature-stream or prompt-embedding files. Each variant is a distinct, testable kind.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated file: header declares {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("trailing data: header declares {expected} bytes, found {found}")]
    TrailingData { expected: u64, found: u64 },

    #[error("record {index}: label {label} outside [-1, {classes})")]
    LabelOutOfRange { index: u64, label: i32, classes: u32 },

    #[error("invalid header: {0}")]
    InvalidHeader(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn check_dim(expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, found })
        }
    }
}
