use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A parameter lies outside the range where the model is defined.
    #[error("parameter out of domain: {0}")]
    Domain(String),

    /// An iterative numerical method did not reach its tolerance.
    #[error("{method} did not converge: {detail}")]
    Convergence { method: &'static str, detail: String },

    /// A cached velocity operator does not belong to the requested grid or kernel.
    #[error("velocity operator cache mismatch: {0}")]
    InvalidCache(String),

    /// Inconsistent solver or grid configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The explicit scheme produced a negative density. Never expected under the
    /// time step restriction, so this indicates a bug.
    #[error("scheme produced a negative density {value:e} in cell {cell} at tau = {tau}")]
    Negative { cell: usize, value: f64, tau: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
