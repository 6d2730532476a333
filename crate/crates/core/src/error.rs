use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed NPY container: {0}")]
    Format(String),

    #[error("unsupported dtype {0:?} (expected little-endian float32 or float64)")]
    Dtype(String),

    #[error("bundle is missing {0}")]
    MissingComponent(String),

    /// A validation invariant failed; the payload names the invariant.
    #[error("bundle invalid ({invariant}): {detail}")]
    BundleInvalid { invariant: &'static str, detail: String },

    #[error("{0} already exists")]
    AlreadyExists(PathBuf),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("non-finite value in {0}")]
    Numeric(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no gradients for class {0}")]
    GradientMissing(usize),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(invariant: &'static str, detail: impl Into<String>) -> Self {
        Error::BundleInvalid {
            invariant,
            detail: detail.into(),
        }
    }

    pub(crate) fn shape(detail: impl Into<String>) -> Self {
        Error::Shape(detail.into())
    }
}
