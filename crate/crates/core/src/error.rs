use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("depth {depth} is out of range for a signal of length {len}")]
    Depth { depth: usize, len: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("index {index} out of range 1..={bound}")]
    Index { index: usize, bound: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("cannot realize transfer function: {0}")]
    Realization(String),

    #[error("moving-average window {window} exceeds signal length {len}")]
    Window { window: usize, len: usize },

    #[error("stacked Hankel matrix has numeric rank {rank}, below the required {required}")]
    Expressivity { rank: usize, required: usize },

    #[error("input is not persistently exciting of order {order} (numeric rank {rank})")]
    NotExciting { order: usize, rank: usize },

    #[error("Riccati iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    DareDivergence { iterations: usize, residual: f64 },

    #[error("singular matrix in {0}")]
    Singular(&'static str),
}
