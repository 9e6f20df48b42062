//! Crate-wide error type.

use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the library. Every variant carries enough context to
/// diagnose the failure without a debugger: offending shapes, layer indices,
/// field names, file paths.
#[derive(Debug)]
pub enum Error {
    /// Two tensors (or a tensor and an operation) disagree on shape.
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    /// A scalar argument is out of range or otherwise unusable.
    InvalidArgument { what: String },
    /// A NaN or infinity appeared where only finite values are allowed.
    NonFinite { op: &'static str, detail: String },
    /// A backbone spec cannot produce a valid network.
    InvalidSpec { layer: usize, reason: String },
    /// Training diverged; `epoch` is the first epoch with a non-finite loss.
    Training { epoch: usize, scale: usize, reason: String },
    /// A config file failed JSON parsing.
    ConfigParse {
        line: usize,
        column: usize,
        message: String,
    },
    /// A config value violates a documented constraint.
    ConfigValidation { field: &'static str, reason: String },
    /// Filesystem failure, tagged with the path involved.
    Io { path: PathBuf, source: std::io::Error },
    /// An image file exists but cannot be decoded.
    Decode { path: PathBuf, reason: String },
}

impl Error {
    pub fn invalid<S: Into<String>>(what: S) -> Self {
        Error::InvalidArgument { what: what.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, expected, got } => {
                write!(f, "{op}: shape mismatch, expected {expected}, got {got}")
            }
            Error::InvalidArgument { what } => write!(f, "invalid argument: {what}"),
            Error::NonFinite { op, detail } => write!(f, "{op}: non-finite value ({detail})"),
            Error::InvalidSpec { layer, reason } => {
                write!(f, "invalid backbone spec at layer {layer}: {reason}")
            }
            Error::Training { epoch, scale, reason } => {
                write!(f, "training failed at scale {scale}, epoch {epoch}: {reason}")
            }
            Error::ConfigParse { line, column, message } => {
                write!(f, "config parse error at line {line}, column {column}: {message}")
            }
            Error::ConfigValidation { field, reason } => {
                write!(f, "config field `{field}`: {reason}")
            }
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Error::Decode { path, reason } => {
                write!(f, "cannot decode {}: {reason}", path.display())
            }
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
