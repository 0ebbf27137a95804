use thiserror::Error;

use crate::nlp::NlpSolution;

#[derive(Debug, Error)]
pub enum SolverError {
    /// KKT system singular beyond the least-squares fallback.
    #[error("rank-deficient KKT system: {0}")]
    RankDeficient(String),

    /// Active-set cycle cap exceeded; carries the last iterate.
    #[error("active-set procedure did not converge in {cycles} cycles")]
    NonConvergence {
        cycles: usize,
        last: Box<NlpSolution>,
    },

    /// No feasible point found.
    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error(transparent)]
    Core(#[from] rto_core::CoreError),
}
