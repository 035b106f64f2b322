use thiserror::Error;

/// Errors produced by model construction, estimation and file handling.
#[derive(Debug, Error)]
pub enum BmcError {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("row {row} is not stochastic (sum = {sum})")]
    NotStochastic { row: usize, sum: f64 },

    #[error("cluster {0} has no states")]
    EmptyCluster(usize),

    #[error("chain is not ergodic: {0}")]
    NonErgodic(String),

    #[error("path too short: length {len}, need at least {min}")]
    PathTooShort { len: usize, min: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("no transition row defined for window {window:?}")]
    MissingRow { window: Vec<usize> },

    #[error("transition {i}->{j} at step {t} has zero probability under one of the models")]
    ZeroProbabilityTransition { t: usize, i: usize, j: usize },

    #[error("kernels differ in support at ({i},{j})")]
    SupportMismatch { i: usize, j: usize },

    #[error("confidence level z = {0} must lie in (0,1)")]
    InvalidZ(f64),

    #[error("cluster {0} has zero outgoing mass")]
    ZeroMassCluster(usize),

    #[error("fixed point did not converge at x = {x} (residual {residual:e})")]
    NoConvergence { x: f64, residual: f64 },

    #[error("no symbols remain after frequency filtering")]
    EmptyAfterFilter,

    #[error("grid cell at latitude index {j_lat} is degenerate (|cos| below 1e-9)")]
    DegenerateCell { j_lat: i64 },

    #[error("paths do not share a vocabulary")]
    VocabularyMismatch,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BmcError>;
