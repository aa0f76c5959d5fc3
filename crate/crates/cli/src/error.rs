use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] otadp::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("{failed} of {total} adjacent pairs exceeded the analytic bound by more than 3 standard errors")]
    BoundViolation { failed: usize, total: usize },

    #[error("{0} sweep cell(s) were infeasible; see the summary")]
    InfeasibleCells(usize),

    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

impl HarnessError {
    /// 2 config, 3 privacy infeasible, 4 bound violation, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Core(otadp::Error::Config(_)) | HarnessError::Usage(_) => 2,
            HarnessError::Core(otadp::Error::Infeasible(_)) | HarnessError::InfeasibleCells(_) => 3,
            HarnessError::BoundViolation { .. } => 4,
            _ => 1,
        }
    }
}
