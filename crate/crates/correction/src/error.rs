use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorrectionError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("submodel input {entry} of submodel {submodel} references unobservable measurement {missing}")]
    UnobservableInput {
        submodel: usize,
        entry: usize,
        missing: String,
    },

    #[error("network wiring ill-posed: {0}")]
    Wiring(String),

    #[error("fixed-point evaluation diverged after {iterations} iterations (residual {residual})")]
    FixedPointDiverged { iterations: usize, residual: f64 },

    #[error("hessian evaluation failed: {0}")]
    Hessian(String),

    #[error(transparent)]
    Core(#[from] rto_core::CoreError),
}
