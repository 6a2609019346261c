use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied data or parameters that violate a precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// A numerical routine failed or produced non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The APG iteration produced a non-finite loss or gradient.
    #[error("non-finite objective or gradient at iteration {iteration}")]
    NonFinite { iteration: usize },

    /// Correlation requested where the estimated variance vanishes.
    #[error("estimated variance {variance:e} at t = {t} is below the floor")]
    DegenerateVariance { t: f64, variance: f64 },

    /// The L2 Gram of the basis is numerically zero.
    #[error("degenerate estimate: {0}")]
    DegenerateEstimate(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
