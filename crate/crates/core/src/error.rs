use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("quadrature did not converge (residual estimate {residual:e})")]
    Quadrature { residual: f64 },

    /// Bits are left over with no slot to carry them.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The gain is unbounded, which happens when the whole latency budget is prefetching.
    #[error("prefetching gain is unbounded when N = N_P")]
    UnboundedGain,

    #[error("instance too large: {0}")]
    InstanceTooLarge(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Quadrature { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
