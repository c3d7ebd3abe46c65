use thiserror::Error;

use crate::tensor::GroupTensor2;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The refinement schedule ran out before successive iterates agreed.
    #[error("integration did not converge: last two iterates differ by {gap:e}")]
    NotConverged {
        gap: f64,
        last: Box<GroupTensor2>,
        previous: Box<GroupTensor2>,
    },

    #[error("solution left the finite range at t = {time}")]
    BlowUp { time: f64 },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
