use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range for size {len}")]
    Index { index: usize, len: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("embedding {index} has zero norm")]
    ZeroNorm { index: usize },

    #[error("key must be 16..=64 bytes, got {0}")]
    KeyLength(usize),

    #[error("length mismatch in {what}: expected {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{blocks} blocks do not fit in {tokens} tokens; use a shorter code or a longer sequence")]
    Capacity { blocks: usize, tokens: usize },

    #[error("message length {0} bits is not supported (at most 64)")]
    UnsupportedMessageLength(usize),

    #[error("BCH decoding failed: more than {t} errors")]
    DecodeFailure { t: usize },

    #[error("empty token sequence")]
    EmptyInput,

    #[error("no calibration for {0}")]
    CalibrationRequired(String),

    #[error("{trials} calibration trials is too few; need at least {required}")]
    InsufficientTrials { trials: usize, required: usize },

    #[error("operation not valid for this paradigm: {0}")]
    Paradigm(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
