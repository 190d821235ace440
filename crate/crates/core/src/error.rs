use thiserror::Error;

/// Errors raised by the charting core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The subgroup cannot support the requested statistic (e.g. zero spread in x).
    #[error("degenerate subgroup: {0}")]
    DegenerateSubgroup(&'static str),

    /// Ratio-type estimators require `x_bar + mu_x > 0`.
    #[error("ratio estimator outside its validity region: x_bar + mu_x = {0}")]
    Domain(f64),

    #[error("normal equations are near-singular (relative determinant {0:e})")]
    NearSingular(f64),

    #[error("calibration range: {0}")]
    CalibrationRange(String),

    #[error("insufficient precision: {0}")]
    Precision(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
