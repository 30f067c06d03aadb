use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("Hankel depth {depth} leaves no columns for a record of {samples} samples")]
    DepthTooLarge { depth: usize, samples: usize },

    #[error("Hankel matrix has {columns} columns, need more than {required}")]
    InsufficientColumns { columns: usize, required: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("input Gram matrix is singular beyond the regularization floor")]
    SingularInputGram,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min:e}, max {max:e})")]
    NotPsd { min: f64, max: f64 },

    #[error("data matrix has no positive spectrum")]
    EmptySpectrum,

    #[error("subspaces live in different ambient spaces ({left} vs {right})")]
    AmbientMismatch { left: usize, right: usize },

    #[error("shifted observability block has rank {rank} < order {order}")]
    RankDeficientShift { rank: usize, order: usize },

    #[error("least-squares problem is ill-conditioned (condition {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("no datasets have been archived")]
    EmptyArchive,

    #[error("degenerate GP training data: {0}")]
    DegenerateTraining(String),

    #[error("state left the finite range")]
    NonFinite,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
