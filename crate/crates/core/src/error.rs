use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid box [{x1}, {y1}, {x2}, {y2}]: coordinates must be finite with x1 < x2 and y1 < y2")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("box lies outside the {width}x{height} frame")]
    OutOfFrame { width: f64, height: f64 },

    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("invariant violation at {path}: {message}")]
    Invariant { path: String, message: String },

    #[error("empty evaluation: no examples to aggregate")]
    EmptyEvaluation,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("gold document {0} is missing from the pool")]
    GoldMissing(String),

    #[error("insufficient pool: need {needed} distractors, only {available} available")]
    InsufficientPool { needed: usize, available: usize },

    #[error("no snapshot for document {0}")]
    MissingSnapshot(String),

    #[error("candidate set inconsistency: {0}")]
    Inconsistent(String),

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("image error: {0}")]
    Image(String),
}

impl Error {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn invariant(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invariant {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Field path carried by schema and invariant errors.
    pub fn path(&self) -> Option<&str> {
        match self {
            Error::Schema { path, .. } | Error::Invariant { path, .. } => Some(path),
            _ => None,
        }
    }
}
