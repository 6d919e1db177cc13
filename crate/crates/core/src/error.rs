use std::path::PathBuf;

use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("rank deficiency: requested rank {requested}, pivot ratio {ratio:.3e} below cutoff")]
    RankDeficient { requested: usize, ratio: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite matrix entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("symbol evaluation produced non-finite value {value} at sample {sample}")]
    Evaluation { sample: usize, value: Complex64 },

    #[error("ill-conditioned pullback: condition estimate {condition:.3e} exceeds {limit:.1e}")]
    Conditioning { condition: f64, limit: f64 },

    #[error("path step {step} has jump {jump:.3e} exceeding {limit}")]
    StepSize { step: usize, jump: f64, limit: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("chart error: {0}")]
    Chart(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("report format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
