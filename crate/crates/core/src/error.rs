use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value in {term}")]
    NonFinite { term: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("brute-force oracle refused: {events} events exceeds the limit of {limit}")]
    TooManyEvents { events: usize, limit: usize },

    #[error("integration produced a non-finite state at step {step}")]
    Integration { step: usize },

    #[error("training diverged at step {step}: {term} = {value}")]
    Divergence {
        step: u64,
        term: String,
        value: f64,
    },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint tensor `{name}`: {msg}")]
    CheckpointTensor { name: String, msg: String },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
