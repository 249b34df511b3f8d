use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the planning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("region origin {origin:?} + size {size:?} exceeds volume shape {shape:?}")]
    OutOfBounds {
        origin: [usize; 3],
        size: [usize; 3],
        shape: [usize; 3],
    },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: [usize; 3], right: [usize; 3] },

    #[error("degenerate geometry: {0}")]
    Geometry(String),

    #[error("label contains no voxels")]
    EmptyLabel,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("checkpoint incompatible with current configuration: {0}")]
    CheckpointMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
