use thiserror::Error;

/// Errors produced by the transport library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("capability not available: {0}")]
    Capability(String),

    #[error("point {0:?} lies outside the support")]
    OutsideSupport(Vec<f64>),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("rejection envelope failure: {0}")]
    EnvelopeFailure(String),

    #[error("degenerate tilted measure at t={t}: {reason}")]
    DegenerateMeasure { t: f64, reason: String },

    #[error("step size underflow at t={t} (h={h:e}); last states: {trace}")]
    Stiffness { t: f64, h: f64, trace: String },

    #[error("divergence at t={t}: {reason}")]
    Divergence { t: f64, reason: String },

    #[error("{} of {total} particles failed (first failure at index {}: {first})", failed.len(), failed.first().copied().unwrap_or_default())]
    ParticleFailures {
        total: usize,
        failed: Vec<usize>,
        first: String,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("extrapolation outside the tabulated range: {0}")]
    Extrapolation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(y: &[f64]) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("non-finite coordinates in {y:?}")))
    }
}
