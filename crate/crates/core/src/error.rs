//! Unified error type for the library.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors returned by library operations.
///
/// Variants are grouped by what the caller did wrong (or what the
/// environment did to us), not by which module raised them, so the CLI can
/// map them onto stable exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition
    /// (empty offset list, no positive labels, absent target label, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two inputs that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A NaN or infinity appeared where finite values are required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Bytes that do not parse as the expected file format (NPY header,
    /// graph sidecar, ...).
    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
