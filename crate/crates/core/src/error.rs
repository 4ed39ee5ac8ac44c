use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("degenerate simplex {simplex} (condition number {condition:.3e})")]
    DegenerateSimplex { simplex: usize, condition: f64 },
    #[error("point {0:?} lies outside the triangulated region")]
    OutOfRegion(Vec<f64>),
    #[error("invalid oracle output: {0}")]
    InvalidOracle(String),
    #[error("invalid bound: {0}")]
    InvalidBound(String),
    #[error("mode mismatch: {0}")]
    ModeMismatch(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("compile error: {0}")]
    Compile(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed document: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
