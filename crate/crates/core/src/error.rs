//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid range: start {start} must precede end {end}")]
    InvalidRange { start: String, end: String },

    #[error("invalid cut {cut}: {reason}")]
    InvalidCut { cut: String, reason: String },

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("validation error on line {line}: {message}")]
    Validation { line: usize, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient data: need at least {required} observations, got {actual}")]
    InsufficientData { required: usize, actual: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite activation at timestep {timestep} (layer {layer})")]
    NonFinite { layer: usize, timestep: usize },

    #[error("artifact format version {found} is incompatible with {expected}")]
    IncompatibleVersion { found: u32, expected: u32 },

    #[error("artifact integrity check failed: {0}")]
    Integrity(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
