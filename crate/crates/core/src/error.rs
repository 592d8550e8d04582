use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A problem located in an input table. `row` is the 1-based line number
    /// of the offending record (the header is line 1).
    #[error("line {row}, column '{column}': {reason}")]
    Data {
        row: u64,
        column: String,
        reason: String,
    },

    #[error("cannot read '{}': {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unusable sample: {0}")]
    UnusableSample(String),

    #[error("Gram matrix could not be factorized after jitter escalation: {0}")]
    Conditioning(String),

    #[error("prior adjustment is degenerate: gamma(0, x) vanishes on every control unit")]
    DegenerateAdjustment,

    #[error("treatment indicator has a single class")]
    SingleClass,

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("bootstrap draw has zero treated weight after {0} retries")]
    DegenerateDraw(usize),

    #[error("zero weight mass in the {0} arm")]
    ZeroWeightMass(&'static str),
}

impl Error {
    pub(crate) fn data(row: u64, column: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Data {
            row,
            column: column.into(),
            reason: reason.into(),
        }
    }
}
