use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("malformed tokenization: {0}")]
    MalformedTokenization(String),

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),

    #[error("strategy {strategy} is not supported by this backend (needs {capability} capability)")]
    UnsupportedStrategy { strategy: String, capability: &'static str },

    #[error("sequence of {len} tokens exceeds the backend limit of {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("backend error: {0}")]
    Backend(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wraps a backend failure with the request it was serving.
    pub fn backend_with_context(context: impl std::fmt::Display, err: Error) -> Error {
        match err {
            Error::Backend(msg) => Error::Backend(format!("{context}: {msg}")),
            other => Error::Backend(format!("{context}: {other}")),
        }
    }

    /// True for failures raised by a backend rather than by the caller's input.
    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Backend(_))
    }

    /// Stable machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyInput(_) => "EmptyInput",
            Error::MalformedTokenization(_) => "MalformedTokenization",
            Error::VocabularyMismatch(_) => "VocabularyMismatch",
            Error::InvalidStrategy(_) => "InvalidStrategy",
            Error::UnsupportedStrategy { .. } => "UnsupportedStrategy",
            Error::SequenceTooLong { .. } => "SequenceTooLong",
            Error::Backend(_) => "BackendError",
            Error::Alignment(_) => "AlignmentError",
            Error::Shape(_) => "ShapeError",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::Config(_) => "ConfigError",
            Error::Parse { .. } => "ParseError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
            Error::Csv(_) => "CsvError",
        }
    }
}
