//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("probability row {pixel} sums to {sum}, expected 1 within 1e-6")]
    NotNormalized { pixel: usize, sum: f64 },

    #[error("negative probability at pixel {pixel}, class {class}")]
    NegativeEntry { pixel: usize, class: usize },

    #[error("shape mismatch: {expected} vs {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("no r x c factorization of {superpixels} superpixels fits a {height}x{width} image")]
    InfeasibleGrid {
        height: usize,
        width: usize,
        superpixels: usize,
    },

    #[error("cannot aggregate over an empty superpixel")]
    EmptySuperpixel,

    #[error("budget {budget} exceeds candidate pool of size {pool}")]
    BudgetExceedsPool { budget: usize, pool: usize },

    #[error("training set contains no labeled pixels")]
    NoLabels,

    #[error("AL curve needs at least two points, got {points}")]
    DegenerateCurve { points: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad container: {0}")]
    BadContainer(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
