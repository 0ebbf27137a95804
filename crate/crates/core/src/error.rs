use thiserror::Error;

/// Errors surfaced by evaluation and finite-difference helpers.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A model, cost or constraint evaluation produced a non-finite value.
    #[error("non-finite evaluation at u = {at:?}")]
    NonFinite { at: Vec<f64> },

    /// Vector or matrix dimensions do not match the problem description.
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    /// An invalid parameter was supplied (non-positive step, empty box, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl CoreError {
    pub fn check_dim(expected: usize, got: usize, context: &'static str) -> Result<(), CoreError> {
        if expected != got {
            Err(CoreError::DimensionMismatch {
                expected,
                got,
                context,
            })
        } else {
            Ok(())
        }
    }
}
