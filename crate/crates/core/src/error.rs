use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape mismatch in a network layer or dataset join.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: String,
        got: String,
    },

    /// Token id outside the embedding table.
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenRange { id: u32, vocab_size: usize },

    /// Operation invoked in an invalid state.
    #[error("invalid state: {0}")]
    State(String),

    /// Non-finite value where a finite one is required.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Invalid argument or degenerate input.
    #[error("invalid input: {0}")]
    Input(String),

    /// Syntactically malformed document.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Well-formed document violating the accepted schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Malformed manifest line.
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    /// Checkpoint or feature-file incompatibility.
    #[error("incompatible artifact: expected {expected}, found {found}")]
    Compat { expected: String, found: String },

    /// Inconsistent pipeline or model configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Synthetic corpus spec cannot be satisfied.
    #[error("generation error: {0}")]
    Generation(String),

    /// Metric undefined for the given inputs (e.g. single-class AUC).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Malformed serialized artifact (vocab file, container, checkpoint).
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dimension(context: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
