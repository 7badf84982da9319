use thiserror::Error;

#[derive(Debug, Error)]
pub enum MtlbError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("numeric abort: {0}")]
    Numeric(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] mtlb_autodiff::AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MtlbError>;

impl MtlbError {
    /// Process exit code for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            MtlbError::Config(_) | MtlbError::Usage(_) => 2,
            MtlbError::Numeric(_) => 4,
            MtlbError::Autodiff(mtlb_autodiff::AutodiffError::Numeric { .. }) => 4,
            _ => 3,
        }
    }
}
