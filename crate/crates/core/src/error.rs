use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the detection and explanation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed input file: {0}")]
    MalformedFile(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dataset is not labeled")]
    Unlabeled,

    #[error("minority class too small for SMOTE: {have} windows, need more than {k}")]
    InsufficientMinority { have: usize, k: usize },

    #[error("training data contains a single class ({0})")]
    DegenerateLabels(String),

    #[error("fold {fold} training portion is missing a class")]
    DegenerateFold { fold: usize },

    #[error("unsupported file version {found:?} (expected {expected:?})")]
    UnsupportedVersion { found: String, expected: String },

    #[error("malformed model file: {0}")]
    MalformedModel(String),

    #[error("cannot build an index over zero points")]
    EmptyIndex,

    #[error("requested {requested} neighbours from an index of {available}")]
    InsufficientDistractors { requested: usize, available: usize },

    #[error("no correctly classified training windows of class {0}")]
    EmptyClassIndex(u8),

    #[error("no counterfactual found: {}", .0.message)]
    NoCounterfactualFound(Box<crate::cf::SearchFailure>),

    #[error("unknown window id {0}")]
    UnknownWindow(u64),

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
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
