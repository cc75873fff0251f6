use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes of the filtering and synthesis pipeline.
///
/// Variants split roughly into input problems (`DimensionMismatch`,
/// `NotReachable`, `NotObservable`, `DegenerateNoise`, `BracketInvalid`) and
/// numerical breakdowns (everything else). Callers that need the split use
/// [`Error::is_input_error`].
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch { context: String, expected: String, got: String },

    #[error("matrix is not Schur stable (spectral radius {radius})")]
    NotStable { radius: f64 },

    #[error("matrix is not positive definite (minimum eigenvalue {min_eig:e})")]
    NotPositiveDefinite { min_eig: f64 },

    #[error("near-singular matrix in {context} (eigenvalue {eigenvalue:e})")]
    NearSingular { context: String, eigenvalue: f64 },

    #[error("non-finite entries in {0}")]
    NonFinite(String),

    #[error("(A, B) is not reachable: reachability rank {rank} < {n}")]
    NotReachable { rank: usize, n: usize },

    #[error("(A, C) is not observable: observability rank {rank} < {n}")]
    NotObservable { rank: usize, n: usize },

    #[error("degenerate noise model: {0}")]
    DegenerateNoise(String),

    #[error("argument out of domain in {context}: {detail}")]
    OutOfDomain { context: String, detail: String },

    #[error("{context} did not converge after {iterations} iterations (last relative change {last_change:e})")]
    NoConvergence { context: String, iterations: usize, last_change: f64 },

    #[error("recursion diverged at step {step} (norm {norm:e})")]
    Diverged { step: usize, norm: f64 },

    #[error("invalid bracket [{lo}, {hi}]: {detail}")]
    BracketInvalid { lo: f64, hi: f64, detail: String },

    #[error("quadratic has no real roots (discriminant {discriminant:e})")]
    NoRealRoots { discriminant: f64 },
}

impl Error {
    pub(crate) fn dims(context: &str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch { context: context.to_string(), expected: expected.to_string(), got: got.to_string() }
    }

    pub(crate) fn domain(context: &str, detail: impl Into<String>) -> Self {
        Error::OutOfDomain { context: context.to_string(), detail: detail.into() }
    }

    /// True for errors caused by the caller's model or arguments rather than by
    /// a numerical breakdown along the way.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::NotReachable { .. }
                | Error::NotObservable { .. }
                | Error::DegenerateNoise(_)
                | Error::BracketInvalid { .. }
                | Error::NonFinite(_)
        )
    }
}
