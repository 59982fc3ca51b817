use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid dimension {dim}: {reason}")]
    InvalidDimension { dim: usize, reason: &'static str },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not Hermitian (residual {0:e})")]
    NotHermitian(f64),

    #[error("enumeration needs {required:e} partial walks, budget is {budget}")]
    BudgetExceeded { required: f64, budget: u64 },

    #[error("spectrum leaves [-1, 1] (non-Ramanujan)")]
    NonRamanujan,

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("replica {index} failed: {source}")]
    Replica {
        index: u64,
        #[source]
        source: Box<LabError>,
    },

    #[error("eigensolver failed: {0}")]
    Eigen(String),
}

pub type Result<T> = std::result::Result<T, LabError>;
