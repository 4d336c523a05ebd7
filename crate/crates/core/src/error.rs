use thiserror::Error;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unsupported dimension {0}; only H2 and H3 are supported")]
    UnsupportedDimension(usize),
    #[error("point is not on the hyperboloid (residual {0:e})")]
    OffManifold(f64),
    #[error("degenerate geodesic: {0}")]
    DegenerateGeodesic(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("insufficient scales: {usable} usable, need {needed}")]
    InsufficientScales { usable: usize, needed: usize },
    #[error("scale {eps:e} is below the sample resolution {resolution:e}")]
    Undersampled { eps: f64, resolution: f64 },
    #[error("boundary set is degenerate: {0}")]
    DegenerateBoundary(String),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("mesh error: {0}")]
    Mesh(String),
    #[error("audit failed: {0}")]
    Audit(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
