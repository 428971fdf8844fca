use thiserror::Error;

/// Errors raised by the numerical operations and the run driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("kernel singular at origin")]
    SingularAtOrigin,

    #[error("evaluation point coincides with a point mass at {0:?}")]
    PointMassSingularity(Vec<f64>),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("homogeneity relation violated: p*(d-alpha) = {lhs} but d = {d} (p = {p}, alpha = {alpha})")]
    Homogeneity { p: f64, d: usize, alpha: f64, lhs: f64 },

    #[error("point {0:?} is not on the domain boundary")]
    NotOnBoundary(Vec<f64>),

    #[error("cube is not a boundary cube")]
    NotBoundaryCube,

    #[error("divergent integral: {0}")]
    Divergent(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
