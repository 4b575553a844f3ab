use thiserror::Error;

/// Errors produced by the decoupling library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid argument: {0}")]
    Domain(String),

    #[error("matrix is not symmetric: max asymmetry {asymmetry:e} exceeds {tolerance:e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("matrix is not positive semidefinite: min eigenvalue {min_eig:e}, max eigenvalue {max_eig:e}")]
    NotPsd { min_eig: f64, max_eig: f64 },

    #[error("weight matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("singular weight: variance of element {index} is {value:e}")]
    SingularWeight { index: usize, value: f64 },

    #[error("branch {branch}: {reason}")]
    Reconstruction { branch: usize, reason: String },

    #[error("all {restarts} restarts diverged (last cost {last_cost})")]
    Diverged { restarts: usize, last_cost: f64 },

    #[error("filter {name} is unstable (pole {pole})")]
    UnstableFilter { name: String, pole: f64 },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
