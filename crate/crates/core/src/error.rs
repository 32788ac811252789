use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("missing input file: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("label {0} does not fit in a 16-bit label map")]
    LabelOverflow(u32),

    #[error("unknown voxel key {0:?}")]
    UnknownVoxel([i32; 3]),

    #[error("histogram length mismatch: {0} vs {1}")]
    HistogramLength(usize, usize),

    #[error("scene {scene}: {source}")]
    Scene {
        scene: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Errors caused by the caller's configuration rather than the run.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::InvalidParameter(_) | Error::MissingInput(_) => true,
            Error::Scene { source, .. } => source.is_usage(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidParameter(message.into())
    }
}
