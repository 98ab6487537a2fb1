use thiserror::Error;

/// Errors raised anywhere in the pipeline from mesh construction to output.
#[derive(Debug, Error)]
pub enum DpgError {
    #[error("triangle {tri} is degenerate (area {area:e})")]
    DegenerateElement { tri: usize, area: f64 },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("unsupported polynomial degree {0} (supported: 0..=4)")]
    UnsupportedDegree(usize),

    #[error("edge {edge} is not on the boundary of triangle {tri}")]
    EdgeNotIncident { edge: usize, tri: usize },

    #[error("quadrature did not converge ({context}); partial value {partial:e}")]
    QuadratureNotConverged { context: String, partial: f64 },

    #[error("single-layer potential is not finite at target {target:?}")]
    NonFinitePotential { target: [f64; 3] },

    #[error("local Gram block of element {0} is not positive definite")]
    GramFactorization(usize),

    #[error("right-hand side violates the mean-zero condition on a closed surface: <f,1> = {mean:e} (scale {scale:e})")]
    NonZeroMean { mean: f64, scale: f64 },

    #[error("invalid manufactured solution: {0}")]
    InvalidExactSolution(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dense solve failed: normal matrix is not positive definite")]
    DenseSolve,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DpgError>;
