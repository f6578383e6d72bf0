use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the model, estimators and file formats.
#[derive(Debug, Error)]
pub enum OmmError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("time index {t} out of range 1..={bins}")]
    TimeOutOfRange { t: usize, bins: usize },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("intensity exploded on platform {platform} at t={t} (lambda={lambda:e}); state: {state}")]
    Explosion {
        platform: usize,
        t: usize,
        lambda: f64,
        state: String,
    },

    #[error("degenerate market: {0}")]
    Degenerate(String),

    #[error("{file}: missing series {series}")]
    MissingSeries { file: String, series: String },

    #[error("{file}, row {row}, column {column}: negative count {value}")]
    NegativeCount {
        file: String,
        row: usize,
        column: String,
        value: String,
    },

    #[error("{file}, row {row}: length mismatch: {detail}")]
    LengthMismatch {
        file: String,
        row: usize,
        detail: String,
    },

    #[error("{file}, row {row}, column {column}: unknown label {label:?}")]
    UnknownLabel {
        file: String,
        row: usize,
        column: String,
        label: String,
    },

    #[error("{file}, row {row}: {detail}")]
    Malformed {
        file: String,
        row: usize,
        detail: String,
    },

    #[error("unsupported document version {found} (this build reads {supported})")]
    VersionMismatch { found: String, supported: String },

    #[error("checksum mismatch: expected {expected}, computed {computed}")]
    Checksum { expected: String, computed: String },

    #[error("schema mismatch: expected {expected}, found {found}")]
    Schema { expected: String, found: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{0}")]
    Serialization(#[from] serde_json::Error),

    /// An error raised inside a named pipeline stage.
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<OmmError>,
    },
}

/// Coarse error class, used by drivers to pick exit and status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Data,
    Numerical,
}

impl OmmError {
    pub fn class(&self) -> ErrorClass {
        match self {
            OmmError::Stage { source, .. } => source.class(),
            OmmError::NonFinite(_) | OmmError::Explosion { .. } => ErrorClass::Numerical,
            OmmError::InvalidParameter(_)
            | OmmError::IndexOutOfRange(_)
            | OmmError::TimeOutOfRange { .. } => ErrorClass::Input,
            _ => ErrorClass::Data,
        }
    }

    /// Labels the error with the stage that raised it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        OmmError::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        OmmError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, OmmError>;
