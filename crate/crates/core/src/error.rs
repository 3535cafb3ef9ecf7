use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
    #[error("cannot parse value for `{key}`: `{value}`")]
    BadValue { key: String, value: String },
    #[error("{key} {message}")]
    Invalid { key: String, message: String },
    #[error("malformed line {line}: `{text}`")]
    Syntax { line: usize, text: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("zero-norm row {0}")]
    ZeroNorm(usize),
    #[error("non-finite weight update at step {step} (neuron {neuron})")]
    NonFinite { step: u64, neuron: usize },
    #[error("bad binary file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(key: &str, message: impl Into<String>) -> Self {
        Error::Invalid {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
