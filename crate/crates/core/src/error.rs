use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("jacobi eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),

    #[error("perturbation kernel is degenerate at t = {0} (std is zero)")]
    DegenerateKernel(f64),

    #[error("invalid step: {0}")]
    InvalidStep(String),

    #[error("backward called without a recorded forward pass")]
    NoForward,

    #[error("invalid missing pattern: {0}")]
    Pattern(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("model has not been trained")]
    Untrained,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("checkpoint does not match dataset: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
