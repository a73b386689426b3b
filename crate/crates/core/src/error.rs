use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The perturbation series only converges when ‖X‖ < λ_r / 2.
    #[error("SNR gate violated: noise norm {noise_norm} is not below half of lambda_r = {lambda_r}")]
    PreconditionViolation { noise_norm: f64, lambda_r: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),

    #[error("experiment failed: {failed} of {total} replicates could not be computed")]
    TooManyFailures { failed: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
