use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum GassoError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("rank {requested} out of range (limit {limit})")]
    RankOutOfRange { requested: usize, limit: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("non-finite log-likelihood during sub-update `{0}`")]
    NonFiniteLikelihood(String),

    #[error("sparse SVD thresholding annihilated component {0}")]
    ComponentAnnihilated(usize),

    #[error("cross-validation plan constraint unsatisfiable: {0}")]
    CvPlan(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("support violation at row {row}, column {column}: value {value} invalid for {family}")]
    Support {
        row: usize,
        column: usize,
        value: f64,
        family: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, GassoError>;
