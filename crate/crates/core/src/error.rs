use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid heatmap: {0}")]
    InvalidHeatmap(String),

    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },

    #[error("augmentation {spec} out of range for a {width}x{height} grid")]
    AugmentationRange {
        spec: String,
        width: usize,
        height: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("malformed archive at byte offset {offset}: {reason}")]
    Archive { offset: u64, reason: String },

    #[error("non-finite learner parameter `{0}`")]
    NonFiniteParam(&'static str),

    #[error("undefined AUC: {0}")]
    UndefinedAuc(&'static str),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Errors caused by bad input data rather than bad configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Archive { .. }
                | Error::InvalidHeatmap(_)
                | Error::InvalidInput(_)
                | Error::DimensionMismatch { .. }
                | Error::Json(_)
                | Error::Io { .. }
        )
    }
}
