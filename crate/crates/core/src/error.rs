use thiserror::Error;

use crate::engine::RunTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("sample index {index} out of range for n = {n}")]
    SampleIndexOutOfRange { index: usize, n: usize },

    #[error("mini-batch is empty")]
    EmptyBatch,

    #[error("batch size must be at least 1")]
    ZeroBatchSize,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration for `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("scheduler kind `{kind}` requires parameter `{field}`")]
    MissingParameter { kind: &'static str, field: &'static str },

    #[error("learning rate {eta} violates eta < 2/L = {limit}")]
    StepSizeTooLarge { eta: f64, limit: f64 },

    #[error("stage {stage} out of range for {stages} stages")]
    StageOutOfRange { stage: usize, stages: usize },

    #[error("length mismatch: {left} learning rates vs {right} batch sizes")]
    LengthMismatch { left: usize, right: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("divergence at step {step}: {reason}")]
    Diverged {
        step: usize,
        reason: String,
        trace: Box<RunTrace>,
    },

    #[error(
        "precision eps = {eps} unreachable within {max_steps} steps for every batch size; \
         try a larger max_steps or a larger eps"
    )]
    PrecisionUnreachable { eps: f64, max_steps: usize },
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }
}
