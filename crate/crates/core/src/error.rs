use thiserror::Error;

use crate::grad::GradError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate state: amplitude matrix has zero norm after symmetrization")]
    DegenerateState,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("singular value decomposition did not converge")]
    SvdFailed,

    #[error("permanent of a {0}x{0} matrix is too large for the naive expansion")]
    PermanentTooLarge(usize),

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Grad(#[from] GradError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors that come from numerics rather than from bad input or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::SvdFailed
                | Error::Diverged { .. }
                | Error::DegenerateState
                | Error::Grad(GradError::NonFinite { .. })
        )
    }
}
