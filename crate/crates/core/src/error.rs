use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("eigensolver failed to converge at index {index} (seed {seed:?})")]
    NoConvergence { index: usize, seed: Option<u64> },

    #[error("secular root bracketing failed in interval {interval}: {detail}")]
    BracketFailure { interval: usize, detail: String },

    #[error("weight {value:e} at index {index} is negative: spectra do not interlace")]
    SignInconsistency { index: usize, value: f64 },

    #[error("{what}: outside domain at {point}")]
    Domain { what: &'static str, point: f64 },

    #[error("no collective state for kappa^2 <= 1 (kappa = {0})")]
    NoCollectiveState(f64),

    #[error("empty sample set: {0}")]
    EmptySelection(String),

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("bessel I1 overflows for argument {0}")]
    Overflow(f64),

    #[error("config error at line {line}, column {column}: {message}")]
    Config {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
