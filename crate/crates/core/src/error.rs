use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library. Contract violations carry enough context to
/// name the offending value or field.
#[derive(Debug, Error)]
pub enum Error {
    #[error("state is not live (x = {x}, psi = {psi})")]
    NotLive { x: f64, psi: f64 },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid value for `{field}`: {reason}")]
    InvalidValue { field: String, reason: String },

    #[error("dataset too small: need at least {needed} samples, got {got}")]
    DatasetTooSmall { needed: usize, got: usize },

    #[error("index {index} out of range for codebook with {size} entries (feature {feature})")]
    IndexOutOfRange {
        feature: usize,
        index: usize,
        size: usize,
    },

    #[error("the null message carries no payload to decode")]
    NullMessage,

    #[error("level {0} is not in the codebook ensemble")]
    UnknownLevel(u8),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("missing context for observer reward: {0}")]
    MissingContext(&'static str),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("bad file format in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidValue {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
