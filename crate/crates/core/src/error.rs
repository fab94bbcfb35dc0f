use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not positive definite after regularization ({0})")]
    Indefinite(&'static str),

    #[error("covariance is not positive semidefinite (min eigenvalue {min_eig:e}, max {max_eig:e})")]
    NotPsd { min_eig: f64, max_eig: f64 },

    #[error("degenerate block-diagonalization null space for users {users:?}")]
    DegenerateNullSpace { users: Vec<usize> },

    #[error("subset {subset:?} is not BD-feasible: {reason}")]
    InfeasibleSubset { subset: Vec<usize>, reason: String },

    #[error("exhaustive search refused: L = {l} exceeds the cap of {cap} RAPs")]
    TooManyRaps { l: usize, cap: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
