use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates the operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("Sinkhorn balancing did not converge after {iterations} sweeps (row residual {row_residual:.3e}, column residual {col_residual:.3e})")]
    Convergence {
        iterations: usize,
        row_residual: f64,
        col_residual: f64,
    },

    #[error("no matrix met the spectral bounds in {attempts} attempts (best slem {best_slem:.4}, best tlem {best_tlem:.4})")]
    SamplingBudget {
        attempts: usize,
        best_slem: f64,
        best_tlem: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Moments could not be estimated from the training signal.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// Exhaustive enumeration would exceed its size limit.
    #[error("instance too large: {0}")]
    Budget(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Samples with zero spread; the payload is their common value.
    #[error("samples form a point mass at {0}")]
    PointMass(f64),

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

    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Convergence { .. } | Error::SamplingBudget { .. } | Error::Budget(_) => 3,
            Error::Io(_) | Error::Numerical(_) => 1,
            _ => 2,
        }
    }
}
