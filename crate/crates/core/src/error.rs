use alloc::string::String;

/// Failure categories shared by every module.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An input violates a precondition (support, normalization, shape).
    #[error("domain error: {0}")]
    Domain(String),
    /// The requested combination is not handled by this implementation.
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// An iterative solver ran out of budget.
    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    /// Loss increased for too many consecutive iterations.
    #[error("divergence after {iterations} iterations")]
    Divergence { iterations: usize },
    /// A size cap was exceeded.
    #[error("resource limit: {0}")]
    Resource(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn unsupported(msg: impl Into<String>) -> Error {
    Error::Unsupported(msg.into())
}
