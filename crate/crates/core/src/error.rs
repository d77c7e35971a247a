use thiserror::Error;

/// Errors raised by the estimators and their numerical building blocks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadrature did not converge (last estimates {previous:e} and {last:e})")]
    Quadrature { previous: f64, last: f64 },

    #[error("photon-number truncation exceeded the cap of {cap}")]
    Truncation { cap: usize },

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),

    #[error("degenerate source statistics: {0}")]
    DegenerateSource(String),

    #[error("undefined bound: {0}")]
    UndefinedBound(String),

    #[error("photon-number ratio ordering violated: {0}")]
    RatioOrdering(String),

    #[error("observed click probability {observed:e} is not reachable inside the declared fluctuation box")]
    InconsistentObservation { observed: f64 },

    #[error("key rate without fluctuation is zero at {distance_km} km (beyond cutoff)")]
    BeyondCutoff { distance_km: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
