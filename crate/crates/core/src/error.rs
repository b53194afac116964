use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inputs whose shapes disagree with the model or with each other.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A value outside the domain of a density or transform.
    #[error("numeric domain error in `{param}`: {detail}")]
    Domain { param: String, detail: String },

    #[error("optimizer failed after {iterations} iterations (last gradient norm {grad_norm:.3e})")]
    Optimizer {
        iterations: usize,
        grad_norm: f64,
        /// Last few iterates, oldest first.
        trace: Vec<Vec<f64>>,
    },

    #[error("curvature error: {0}")]
    Curvature(String),

    #[error(
        "shrinkage matrix is near-singular (smallest/largest singular value {ratio:.3e}); \
         use the SVD estimator for random effects without data"
    )]
    SingularShrinkage { ratio: f64 },

    #[error("rank-deficient matrix: {context}; null direction {direction:?}")]
    RankDeficient { context: String, direction: Vec<f64> },

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("experiment aborted: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(param: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Domain {
            param: param.into(),
            detail: detail.into(),
        }
    }
}
