use std::path::PathBuf;

use crate::volcore::LandmarkId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("malformed volume header: {0}")]
    MalformedHeader(String),
    #[error("payload size mismatch: header declares {expected} values, payload holds {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("non-finite value at payload index {0}")]
    NonFinite(usize),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("shape mismatch on {axis}: {detail}")]
    Shape { axis: String, detail: String },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("label {label} outside class range 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("probability map has zero total mass")]
    EmptyMap,
    #[error("missing landmark {0} required by {1}")]
    MissingLandmark(LandmarkId, &'static str),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }

    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config { field, reason: reason.into() }
    }

    pub(crate) fn shape(axis: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape { axis: axis.into(), detail: detail.into() }
    }
}
