use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is rank deficient: rank {rank}, required {required}")]
    RankDeficient { rank: usize, required: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("dimension {dim} exceeds the dense cap {cap}; reduce the problem size")]
    TooLarge { dim: usize, cap: usize },

    #[error("overall convexity certificate failed: lambda_min = {lambda_min:e} < -{threshold:e}")]
    CertificateFailed { lambda_min: f64, threshold: f64 },

    #[error("step sizes violate the positive definiteness condition: {0}")]
    StepCondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
