use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge: estimated relative error {rel_err:.3e} after {subdivisions} subdivisions")]
    ConvergenceFailure { rel_err: f64, subdivisions: usize },

    /// `p - r` lost more significant digits than the quadrature can support.
    /// `approx` is the best available value, kept for diagnostics only.
    #[error("cancellation: {digits_lost:.1} significant digits lost in p - r")]
    Cancellation { digits_lost: f64, approx: f64 },

    #[error("negative density: r exceeds p by relative {excess:.3e}")]
    NegativeDensity { excess: f64 },

    #[error("PDE domain too small: far-boundary value {ratio:.3e} of the slice maximum")]
    DomainTooSmall { ratio: f64 },

    #[error("PDE stability failure: value {ratio:.3e} of the slice maximum")]
    StabilityFailure { ratio: f64 },

    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
