use alloc::string::String;

/// Errors raised by the numerical kernels and the training harness.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {what} at token {token}")]
    NonFinite { what: &'static str, token: usize },
    #[error("unstable decay: A[{channel}, {state}] = {value} is not negative")]
    Unstable {
        channel: usize,
        state: usize,
        value: f64,
    },
    #[error("sequence length {len} exceeds the alpha-matrix guard of {limit}")]
    TooLong { len: usize, limit: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("batch of size {0} cannot supply a mixing partner")]
    BatchTooSmall(usize),
    #[error("need at least two domains, got {0}")]
    TooFewDomains(usize),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
