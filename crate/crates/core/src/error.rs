use thiserror::Error;

/// Errors raised by the numerical layers and the scenario loader.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge ({context}): residual {residual:.3e}")]
    NonConvergence { context: String, residual: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("coincident starting points make the general-start kernel singular; use the zero-start kernel instead")]
    DegenerateStarts,

    #[error("Vandermonde solve is ill-conditioned for n = {n} (limit {limit})")]
    Conditioning { n: usize, limit: usize },

    #[error("gap probability {value} lies outside [-1e-8, 1 + 1e-8]")]
    OutOfRange { value: f64 },

    #[error("acceptance rate {rate:.3e} is below 1e-4; widen the endpoint separation")]
    Infeasible { rate: f64 },

    #[error("root finding did not converge for order {order}")]
    RootFinding { order: usize },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by bad input rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Domain(_) | Error::Validation(_) | Error::Json(_) | Error::DegenerateStarts)
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
