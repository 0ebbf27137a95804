//! Dense quadratic-program and small-scale NLP solvers.
//!
//! Every model-based optimization in the workspace goes through here: the
//! analytic equality-constrained QP solve, the active-set procedure for
//! inequality QPs, and an SQP loop with numerical derivatives, an l1 merit
//! line search and multi-start. A sol-map sweep utility exposes the
//! correction-point-to-optimizer map used by the stability diagnostics.

pub mod error;
pub mod nlp;
pub mod qp;
pub mod solmap;

pub use error::SolverError;
pub use nlp::{solve_nlp, NlpFunctions, NlpOptions, NlpSolution};
pub use qp::{solve_equality_qp, solve_inequality_qp, ConstraintKind, QpProblem};
pub use solmap::{evaluate_sol_map, SolMapRow};
