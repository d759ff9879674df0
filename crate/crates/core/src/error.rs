use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    InvalidDimension { expected: usize, got: usize },

    #[error("normalization statistics are degenerate: std[{index}] = {value}")]
    DegenerateStats { index: usize, value: f64 },

    #[error("design violates physical constraints")]
    InfeasibleDesign,

    #[error("parameter ranges are infeasible: {accepted} of {drawn} draws satisfied the constraints")]
    RangesInfeasible { drawn: usize, accepted: usize },

    #[error("ensemble training failed: {0}")]
    TrainingFailed(String),

    #[error("standard deviation must be nonnegative, got {value} at index {index}")]
    InvalidStd { index: usize, value: f64 },

    #[error("covariance is ill-conditioned: {0}")]
    IllConditioned(String),

    #[error("factor is not a valid Cholesky factor: diagonal entry {index} is {value}")]
    NotCholesky { index: usize, value: f64 },

    #[error("chain state has zero likelihood")]
    InvalidChainState,

    #[error("no valid proposal after {0} resamples")]
    ProposalStuck(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("k must be at least 1 and at most the number of reference rows ({rows}), got {k}")]
    InvalidK { k: usize, rows: usize },

    #[error("subset size {m} exceeds the number of designs {n}")]
    InvalidSubsetSize { m: usize, n: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
