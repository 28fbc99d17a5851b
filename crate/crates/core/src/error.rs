use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent model input (shapes, symmetry, parameters).
    #[error("model error: {0}")]
    Model(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Factorization hit a pivot that is non-positive or too small relative to the matrix scale.
    #[error("matrix is not positive definite: pivot {value:e} at index {index}")]
    NotPositiveDefinite { index: usize, value: f64 },

    #[error("rank deficiency: rank {rank} < required {required} (deficiency {})", required - rank)]
    RankDeficient { rank: usize, required: usize },

    #[error("Jacobi eigensolver did not converge within {sweeps} sweeps (off-norm {off:e})")]
    NoConvergence { sweeps: usize, off: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("graph generation failed: {0}")]
    Generation(String),

    #[error("search space too large: {0}")]
    GuardExceeded(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Numeric failures (as opposed to bad user input) map to a distinct CLI exit code.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::RankDeficient { .. }
                | Error::NoConvergence { .. }
                | Error::Numeric(_)
        )
    }
}
