//! File interchange: splat PLY files, camera pose files (JSON and COLMAP
//! text), change-map PNGs and score-table CSVs.

pub mod cameras;
pub mod image;
pub mod ply;
pub mod table;

use thiserror::Error;

/// Errors raised while parsing or writing interchange files.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("missing property {0}")]
    MissingProperty(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("unsupported camera model {0} (only PINHOLE and SIMPLE_PINHOLE)")]
    UnsupportedCameraModel(String),

    #[error("invalid camera pose: {0}")]
    InvalidPose(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("PNG encode error: {0}")]
    PngEncode(#[from] png::EncodingError),

    #[error("PNG decode error: {0}")]
    PngDecode(#[from] png::DecodingError),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
