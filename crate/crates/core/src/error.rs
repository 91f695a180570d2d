use thiserror::Error;

/// Errors produced by the simulation and analysis chain.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter block violates its invariants.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Grids or sampling settings are inconsistent with the requested output.
    #[error("configuration error: {0}")]
    Config(String),

    /// Adaptive quadrature ran out of node budget before meeting its tolerance.
    #[error("quadrature did not converge: estimate {estimate:e} (error {error:e}) after {nodes} nodes")]
    Quadrature { estimate: f64, error: f64, nodes: usize },

    /// A transform produced more negative ripple than the clipping policy allows.
    #[error("negative spectral ripple: clipped mass {clipped:e} exceeds {limit:e} of total")]
    Ripple { clipped: f64, limit: f64 },

    /// A least-squares problem failed.
    #[error("fit error: {0}")]
    Fit(String),

    /// An analysis protocol precondition was not met.
    #[error("protocol error: {0}")]
    Protocol(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
