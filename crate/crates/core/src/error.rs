use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the MXInt emulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("shared exponent {exponent} exceeds the representable range [{min}, {max}]")]
    ExponentOverflow { exponent: i64, min: i32, max: i32 },

    #[error("accumulator overflow in block {block}: {detail}")]
    AccumulatorOverflow { block: usize, detail: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("division by zero")]
    DivideByZero,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("digest mismatch for {path}: manifest says {expected}, file hashes to {actual}")]
    Digest {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },
}

/// Coarse error classes; the command-line front end maps them to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Shape(_) | Error::Empty(_) | Error::Format { .. } => {
                ErrorKind::Config
            }
            Error::Io { .. } | Error::Digest { .. } => ErrorKind::Io,
            Error::NonFinite { .. }
            | Error::ExponentOverflow { .. }
            | Error::AccumulatorOverflow { .. }
            | Error::Domain(_)
            | Error::DivideByZero => ErrorKind::Numeric,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
