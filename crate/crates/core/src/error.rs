use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("backward pass requires a scalar output node")]
    NonScalarOutput,

    #[error("non-finite gradient at the current state")]
    NonFiniteGradient,

    #[error("divergent trajectory: non-finite value mid-integration")]
    DivergentTrajectory,

    #[error("singular determinant argument in the entropy approximation")]
    SingularJacobian,

    #[error("observation likelihood has no gradient in the latent variable")]
    UnsupportedLikelihood,

    #[error("non-finite loss; step aborted")]
    NonFiniteLoss,

    #[error("degenerate proposal: {0}")]
    DegenerateProposal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
