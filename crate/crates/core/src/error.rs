use thiserror::Error;

/// Errors raised by the soliton toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not antisymmetric: |M + M^T| = {defect:.3e}")]
    NotSkew { defect: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("trivial subgroup: the generator (theta, v, w, M) vanishes")]
    TrivialGenerator,

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("step size underflow at s = {s} (h = {h:.3e})")]
    StepUnderflow {
        s: f64,
        h: f64,
        last: Box<crate::flow::TrajectorySample>,
    },

    #[error("non-finite value encountered at s = {s}")]
    NonFinite {
        s: f64,
        last: Box<crate::flow::TrajectorySample>,
    },

    #[error("sample {index} (sigma = {sigma}) lies outside the region")]
    RegionExit { index: usize, sigma: f64 },

    #[error("trajectory sampling is not uniform: {0}")]
    NonUniform(String),

    #[error("export failed: {0}")]
    Export(#[from] csv::Error),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
