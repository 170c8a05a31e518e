use thiserror::Error;

/// Errors raised by graph construction, system assembly, solves and oracles.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("structural mismatch: {0}")]
    Structure(String),

    #[error("singular propagation matrix (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("trajectory expansion does not converge (spectral radius {spectral_radius:.6})")]
    Divergence { spectral_radius: f64 },

    #[error("prediction is singular: {0}")]
    SingularPrediction(String),

    #[error("calibration failed after {iterations} iterations: {trace}")]
    Calibration { iterations: usize, trace: String },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
