use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A coefficient, residual or gradient evaluated to NaN or infinity.
    #[error("non-finite value in {context}{}", .step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Numeric { context: String, step: Option<usize> },

    #[error("training diverged at step {step}, iteration {iteration}: {message}")]
    Training {
        step: usize,
        iteration: usize,
        message: String,
    },

    #[error("rank-deficient normal equations at step {step}; increase the sample count or lower the basis degree")]
    RankDeficient { step: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn numeric(context: impl Into<String>, step: Option<usize>) -> Error {
    Error::Numeric {
        context: context.into(),
        step,
    }
}
