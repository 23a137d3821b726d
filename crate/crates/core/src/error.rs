use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("layer mismatch: {0}")]
    LayerMismatch(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("image too small: {0}")]
    ImageTooSmall(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("face crop must be {expected}x{expected}, got {height}x{width}")]
    WrongCropSize {
        expected: usize,
        height: usize,
        width: usize,
    },

    #[error("at least one face is required")]
    NoFaces,

    #[error("missing weights for {kind}: {detail}")]
    MissingWeights { kind: String, detail: String },

    #[error("checksum mismatch for {path}: expected {expected}, got {actual}")]
    ChecksumMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("unsupported backbone kind `{0}`")]
    UnsupportedKind(String),

    #[error("malformed model artifact: {0}")]
    Model(String),

    #[error("non-finite loss at stage {stage}, step {step}")]
    NonFiniteLoss { stage: usize, step: usize },

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
}
