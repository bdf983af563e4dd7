use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the workbench.
///
/// Variants are grouped by how a caller is expected to react: input
/// validation problems (bad shapes, bad configs, malformed files) versus
/// runtime failures (non-finite losses, failed estimations).
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate landmarks: {0}")]
    DegenerateLandmarks(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("manifest validation failed: {0}")]
    Manifest(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("degenerate point configuration: {0}")]
    Degenerate(String),

    #[error("homography estimation failed: {0}")]
    EstimationFailed(String),

    #[error("point maps to infinity under the homography")]
    PointAtInfinity,

    #[error("silent audio input: {0}")]
    SilentAudio(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failure while
    /// running a valid request.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DegenerateLandmarks(_)
                | Error::InvalidInput(_)
                | Error::Shape(_)
                | Error::Config(_)
                | Error::Manifest(_)
                | Error::MissingFile(_)
                | Error::Geometry(_)
                | Error::Parse { .. }
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
