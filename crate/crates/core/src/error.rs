use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("grid mismatch: {0}")]
    Grid(String),

    #[error("noise coupling violated: {0}")]
    Coupling(String),

    #[error("insufficient resolution: {0}")]
    Resolution(String),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("moment order not admissible: {0}")]
    Moment(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

pub(crate) fn grid(msg: impl Into<String>) -> Error {
    Error::Grid(msg.into())
}

/// Returns `Some(k)` when `x` is within relative tolerance of the integer `k >= 0`.
pub(crate) fn as_count(x: f64) -> Option<usize> {
    if !x.is_finite() || x < -1e-9 {
        return None;
    }
    let k = x.round();
    if (x - k).abs() <= 1e-9 * k.max(1.0) {
        Some(k as usize)
    } else {
        None
    }
}
