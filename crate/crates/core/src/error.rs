use thiserror::Error;

/// Errors produced by estimation, I/O, and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A dense tensor would exceed the configured entry cap.
    #[error("dense tensor with {entries} entries exceeds cap of {cap}; use factor-space operations")]
    Size { entries: u128, cap: usize },

    /// The requested rank cannot be identified from the chosen split.
    #[error("rank {rank} exceeds identifiability bound {bound} of the variable split")]
    Identifiability { rank: usize, bound: usize },

    /// Pairwise marginals required by the split are absent.
    #[error("missing marginal blocks for pairs {0:?}")]
    Assembly(Vec<(usize, usize)>),

    /// SPA could not find enough distinct anchors.
    #[error("only {found} of {requested} anchors are distinguishable; try a smaller rank")]
    Degenerate { found: usize, requested: usize },

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    /// A linear solve or optimisation produced non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
