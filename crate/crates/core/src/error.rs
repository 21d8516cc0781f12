use std::path::PathBuf;

/// Errors produced by the measurement library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("raster load error: {field}: {message}")]
    RasterLoad { field: String, message: String },

    #[error("image import error: {0}")]
    Import(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error(
        "crop window exceeds raster extent (overshoot in meters: left {left:.3}, right {right:.3}, top {top:.3}, bottom {bottom:.3})"
    )]
    CropOutOfBounds {
        left: f64,
        right: f64,
        top: f64,
        bottom: f64,
    },

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("no nighttime-light label: {0}")]
    NoLabel(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("degenerate trend: {0}")]
    DegenerateTrend(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("catalog error at line {line}, field {field}: {message}")]
    Catalog {
        line: u64,
        field: String,
        message: String,
    },

    #[error("unresolvable reference: {0}")]
    Unresolvable(String),

    #[error("checksum mismatch for {path}: expected {expected}, found {found}")]
    Checksum {
        path: String,
        expected: String,
        found: String,
    },

    #[error("synthetic scene error: {0}")]
    Synth(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn load(field: &str, message: impl Into<String>) -> Self {
        Error::RasterLoad {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
