use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("state length {got} does not match chain length {expected}")]
    StateLength { expected: usize, got: usize },

    /// A non-finite value appeared after an integration step.
    #[error("simulation diverged at t = {time:.6} s (pendulum {index})")]
    Divergence { time: f64, index: usize },

    /// A controller configuration cannot be realized on this chain.
    #[error("infeasible controller configuration: {0}")]
    Infeasible(String),

    #[error("travel-time estimation failed: {0}")]
    Estimation(String),

    #[error("reference is outside its time range: t = {t:.6} s not in [0, {end:.6}] s")]
    Extrapolation { t: f64, end: f64 },

    #[error("trace normalization undefined: {0}")]
    Normalization(String),

    #[error("invalid data: {0}")]
    Data(String),
}
