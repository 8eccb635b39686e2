use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TalError {
    #[error("polarity sequence is empty")]
    EmptySequence,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("memory parameter {0} outside (0, 1)")]
    InvalidMemory(f64),

    #[error("calibration domain: {0}")]
    CalibrationDomain(String),

    #[error("calibration solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("batch is empty")]
    EmptyBatch,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("data generation failed: {0}")]
    Generation(String),

    #[error("training diverged at step {step} (loss {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("input is empty")]
    EmptyInput,

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
}

pub type Result<T> = std::result::Result<T, TalError>;
