use std::time::Duration;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// The iterate left the finite range (or exceeded the divergence guard)
    /// while producing the model after update `k`.
    #[error("iterate diverged at k = {k}")]
    Diverged { k: u64 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("worker {worker} timed out after {waited:?} at iteration {iteration}; watermarks = {watermarks:?}")]
    BarrierTimeout {
        worker: usize,
        iteration: u64,
        waited: Duration,
        watermarks: Vec<u64>,
    },

    #[error("run aborted")]
    Aborted,

    #[error("worker {worker} failed: {message}")]
    WorkerFailed { worker: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
