use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("numeric error in {op}: {detail}")]
    Numeric { op: &'static str, detail: String },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

pub(crate) fn shape_err<T>(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<T> {
    Err(AutodiffError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}
