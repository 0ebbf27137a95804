//! Iterative real-time-optimization drivers (the outer loop of the
//! theoretical problem): plain iterative setpoint optimization, the
//! adaptive-filter/curvature method, its filter-based-constraint variant,
//! and the active-curvature selection variant. One driver instance runs one
//! scenario; everything is deterministic.

pub mod driver;
pub mod filter;
pub mod probe;
pub mod trace;

pub use driver::{
    caid, iso_step, kmfca_step, kmfcaa_step, measure_convergence_threshold, mfca_step, Algorithm,
    Driver, DriverConfig, DriverError, RunResult, Structure,
};
pub use filter::{compute_adaptive_filter, FilterContext, FilterState, FilterVariant};
pub use probe::{FdProbe, PlantMeasurement, PlantProbe, ProbeScheme};
pub use trace::{RtoTrace, TraceRow};
