use thiserror::Error;

#[derive(Debug, Error)]
pub enum AspError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("duplicate probe point: zero input displacement between experiments {a} and {b}")]
    DuplicateProbe { a: usize, b: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("selector infeasible: emergency mode signalled")]
    EmergencySignal,

    #[error("degenerate feedback law: {0}")]
    DegenerateLaw(String),

    #[error("missing multipliers: the selector must expose them")]
    MissingMultipliers,

    #[error(transparent)]
    Gp(#[from] rto_gp::GpError),

    #[error(transparent)]
    Solver(#[from] rto_solver::SolverError),

    #[error(transparent)]
    Core(#[from] rto_core::CoreError),
}
