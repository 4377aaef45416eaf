use std::time::Duration;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("type mismatch: {0}")]
    TypeMismatch(String),

    #[error("invalid predicate: {0}")]
    InvalidPredicate(String),

    #[error("input is empty")]
    EmptyInput,

    #[error("invalid swap ({m}, {n}) on input of length {len}")]
    InvalidSwap { m: usize, n: usize, len: usize },

    #[error("conditional sampling exhausted its budget: {0}")]
    BudgetExhausted(String),

    #[error("vocabulary is empty")]
    VocabularyEmpty,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported task: {0}")]
    UnsupportedTask(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failures raised while querying a black-box model.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("failed to start model process: {0}")]
    Spawn(std::io::Error),

    #[error("model process exited: {0}")]
    ProcessExit(String),

    #[error("malformed model response: {0}")]
    MalformedResponse(String),

    #[error("model did not answer within {0:?}")]
    Timeout(Duration),

    #[error("model i/o: {0}")]
    Io(#[from] std::io::Error),
}
