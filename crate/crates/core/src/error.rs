use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A gradient or parameter vector contained NaN or infinity.
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    /// Rejection sampling gave up before finding an accepted outcome.
    #[error("resample budget exhausted after {tries} tries")]
    ResampleBudget { tries: usize },
    /// The optimizer schedule has no steps left.
    #[error("optimizer schedule exhausted at step {step} of {total}")]
    ScheduleExhausted { step: usize, total: usize },
    /// An outer step failed; nothing from that step was committed.
    #[error("outer step {step} aborted: {source}")]
    OuterStep { step: usize, source: Box<Error> },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
