use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed UTF-8 input at byte offset {offset}")]
    MalformedInput { offset: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("{what} too long: {len} exceeds limit {max}")]
    TooLong {
        what: &'static str,
        len: usize,
        max: usize,
    },

    #[error("input too short: {0}")]
    TooShort(String),

    #[error("capacity exhausted: {0}")]
    Capacity(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: u64, loss: f64 },

    #[error("session is finished")]
    Finished,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
