use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("singular matrix: pivot {pivot} has value {value:e}")]
    SingularMatrix { pivot: usize, value: f64 },

    /// The Schur-complement CG did not reach its tolerance. The best iterate
    /// seen is returned so callers can inspect it.
    #[error("iterative solver failed after {iterations} iterations (relative residual {residual:e})")]
    IterativeFailure {
        iterations: usize,
        residual: f64,
        best_lambda: Vec<f64>,
        best_delta: Vec<f64>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
