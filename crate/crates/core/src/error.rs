use thiserror::Error;

#[derive(Debug, Error)]
pub enum DfpcError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Soft-thresholding zeroed the whole iterate; nu is too large for the data.
    #[error("shrinkage collapse at iteration {iteration}: all entries thresholded to zero")]
    ShrinkageCollapse { iteration: usize },

    #[error("zero output in column {column}: final normalization undefined")]
    ZeroOutput { column: usize },

    #[error("divergence at step {step} (effective lr {effective_lr:e}): loss is not finite")]
    Divergence { step: usize, effective_lr: f64 },

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DfpcError>;
