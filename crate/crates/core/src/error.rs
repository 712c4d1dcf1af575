use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("quadrature did not converge: error {error:.3e} > tolerance {tolerance:.3e} after {intervals} intervals")]
    Quadrature {
        error: f64,
        tolerance: f64,
        intervals: usize,
    },

    #[error("root solver failed: {0}")]
    RootSolver(String),

    #[error("node budget exceeded: {0}")]
    Budget(String),

    #[error("phase condition unreachable: {0}")]
    Phase(String),

    #[error("saddle certification failed for m = {m}: {reason}")]
    Certification { m: i64, reason: String },

    #[error("contour assembly failed: {0}")]
    Assembly(String),

    #[error("wedge precondition violated at node {node}: |arg| = {arg:.4} > omega = {omega:.4}")]
    Wedge { node: usize, arg: f64, omega: f64 },

    #[error("series truncation error {error:.3e} exceeds tolerance {tolerance:.3e}")]
    Series { error: f64, tolerance: f64 },

    #[error("path tracing failed: {0}")]
    Path(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
