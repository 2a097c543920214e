use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("ε-net would need {points} points, above the cap of {cap}")]
    UnsupportedResolution { points: usize, cap: usize },

    #[error("point escaped the space: {0}")]
    EscapedSpace(String),

    #[error("zero derivative at step {step} of the word")]
    ZeroDerivative { step: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("matrix is not invertible: {0}")]
    NotInvertible(String),

    #[error("renormalized product underflowed at step {step}")]
    SingularProduct { step: usize },

    #[error("subspace is not invariant under atom {atom} (residual {residual:e})")]
    NotInvariant { atom: usize, residual: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("search exhausted without a witness: {0}")]
    NotFound(String),

    #[error("subadditivity violated at n={n}, m={m}, state {state} (excess {excess:e})")]
    SubadditivityViolated { n: usize, m: usize, state: usize, excess: f64 },

    #[error("vector is not an invariant measure (residual {residual:e})")]
    NotInvariantMeasure { residual: f64 },

    #[error("degenerate variance at n={n}")]
    DegenerateVariance { n: usize },

    #[error("perturbed cocycle is not invertible at t={t}")]
    NotInvertibleAt { t: f64 },

    #[error("perturbed map is not a diffeomorphism at t={t}")]
    NotDiffeomorphismAt { t: f64 },
}
