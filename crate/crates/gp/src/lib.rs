//! SE-ARD Gaussian-process regression with the engineering model as prior
//! mean, supporting mixed point and directional-derivative observations.
//!
//! The prior encodes two standing assumptions: the plant-model error is
//! bounded by a known constant (which fixes the prior variance) and both
//! functions share length scales (which fixes the kernel widths). Everything
//! else here is the closed-form covariance algebra for values and
//! directional derivatives, dense factorizations with jitter escalation,
//! and the derived a-priori bounds used by the data pipeline.

pub mod bounds;
pub mod dataset;
pub mod hyper;
pub mod kernel;
pub mod posterior;

pub use bounds::{
    gradient_upper_bound, measurement_variance, quasi_affine_halfwidth, quasi_affine_rel_error_pct,
};
pub use dataset::{GpDataset, GpDatum, GpPrior, Observation};
pub use hyper::derive_lengthscales;
pub use kernel::{kernel, KernelKind, SeArd};
pub use posterior::{GpError, GpPosterior};
