use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("measure has no support points")]
    EmptyMeasure,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid cost matrix: {0}")]
    InvalidCost(String),

    #[error("problem size {size} exceeds the exact solver cap of {cap}")]
    SizeCap { size: usize, cap: usize },

    #[error("infeasible marginals: source mass {source_mass} vs target mass {target_mass}")]
    Infeasible { source_mass: f64, target_mass: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical breakdown: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("truncated input: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("domain solver failed to converge on {fraction:.1}% of iterations (limit {limit:.1}%)")]
    SolverDivergence { fraction: f64, limit: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
