use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("loss is not connected to any differentiable input")]
    NoGraph,
    #[error("backward already ran on this graph; reset gradients before reusing it")]
    GraphReused,
    #[error("non-finite value encountered: {0}")]
    Numeric(String),
    #[error("missing gradient for parameter `{0}`")]
    IncompleteGradient(String),
    #[error("unknown parameter `{0}`")]
    MissingParam(String),
    #[error("invalid length: {0}")]
    InvalidLength(String),
    #[error("insufficient history: need at least 2 past frames, got {0}")]
    InsufficientHistory(usize),
    #[error("action provider: {0}")]
    Provider(String),
    #[error("action stream: {0}")]
    Stream(String),
    #[error("ingestion failed for {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },
    #[error("dataset: {0}")]
    Data(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("corrupt file: {0}")]
    Corruption(String),
    #[error("config: {0}")]
    Config(String),
    #[error("evaluation window: {0}")]
    Window(String),
    #[error("unknown gradient-check op `{0}`")]
    UnknownOp(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    /// True for failures caused by missing prerequisites or bad user input,
    /// as opposed to numerical breakdown.
    pub fn is_usage(&self) -> bool {
        !matches!(self, Error::Numeric(_))
    }
}
