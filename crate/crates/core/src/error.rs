use std::io;

use thiserror::Error;

/// Failures raised by tensor construction and tape operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: index {index} out of range for {bound} rows")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },
}

/// Failures in parsing, splitting and sampling interaction data.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unknown behavior label `{label}`")]
    UnknownBehavior { line: usize, label: String },
    #[error("behavior vocabulary: {0}")]
    Vocabulary(String),
    #[error("no candidate items left to sample for user {user}")]
    EmptyPool { user: usize },
    #[error("timestamp {timestamp} precedes time origin {origin}")]
    TimeRange { timestamp: i64, origin: i64 },
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Invalid model or run configuration.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    Magic { expected: [u8; 4], found: Vec<u8> },
    #[error("checkpoint truncated at byte offset {offset}")]
    Truncated { offset: usize },
    #[error("checkpoint corrupt at byte offset {offset}: {msg}")]
    Corrupt { offset: usize, msg: String },
    #[error("checkpoint does not match model: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Crate-wide error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite gradient in parameter `{name}`")]
    NonFinite { name: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
