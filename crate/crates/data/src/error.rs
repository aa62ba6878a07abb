use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported netpbm format {magic:?} (binary P6/P5 required)")]
    UnsupportedFormat { magic: String },

    #[error("malformed netpbm header: {0}")]
    MalformedHeader(String),

    #[error("truncated netpbm payload: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },

    #[error("trailing bytes after netpbm payload")]
    TrailingData,

    #[error("unsupported maxval {0} (must be 255)")]
    BadMaxval(u32),

    #[error("invalid scene config: {0}")]
    InvalidConfig(String),

    #[error("unsatisfiable placement: {0}")]
    UnsatisfiablePlacement(String),

    #[error("invalid crop size {size} for {width}x{height}")]
    InvalidCrop { size: u32, width: u32, height: u32 },

    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("mask value {value} outside vocabulary of {classes} classes")]
    MaskValueOutOfRange { value: u8, classes: usize },

    #[error("image/mask extent mismatch: {0}")]
    ExtentMismatch(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl DataError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        DataError::Io { path: path.into(), source }
    }
}
