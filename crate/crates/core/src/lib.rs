//! Shared problem types and numerical utilities for steady-state
//! real-time-optimization experiments.
//!
//! The crate holds the objects every other layer consumes: the plant
//! abstraction (a black-box steady-state map with additive measurement
//! noise), the engineer-supplied problem description (model, cost,
//! constraints, bounds), and the finite-difference helpers used to audit
//! analytic gradients and to build measurement-based estimates.

pub mod compose;
pub mod error;
pub mod fd;
pub mod linalg;
pub mod types;

pub use compose::{compose_constraints, compose_cost};
pub use error::CoreError;
pub use fd::{default_fd_step, finite_diff_gradient, finite_diff_hessian, finite_diff_jacobian};
pub use linalg::{min_eigenvalue, psd_clamp};
pub use types::{
    Bounds, EvaluationRecord, Measurement, Plant, PlantInterface, ProblemSpec, ScalarMap,
    VectorMap,
};

/// Dense column vector used across the workspace.
pub type DVec = nalgebra::DVector<f64>;
/// Dense matrix used across the workspace.
pub type DMat = nalgebra::DMatrix<f64>;
