//! Correction structures attaching measurement information to a model.
//!
//! Four first-order structures are provided: direct modifiers on cost and
//! constraints (D), indirect modifiers on the model outputs (I), and the
//! submodel-level structures correcting each submodel as a function of the
//! plant inputs (A) or of its own inputs (B). A zeroth-order emergency
//! correction and local convexification of corrected functions complete the
//! toolbox.

pub mod affine;
pub mod convexify;
pub mod error;
pub mod network;
pub mod structured;

pub use affine::{
    build_emergency_correction, build_modifiers_d, build_modifiers_i, corrected_model_direct,
    corrected_model_indirect, AffineModifierSet, AffineStructure, CorrectedModel, DirectPlantData,
    IndirectPlantData,
};
pub use convexify::{convexify, ConvexMode, ConvexifiedProblem, ConvexRow, QuadraticModel};
pub use error::CorrectionError;
pub use network::{EvalOrder, NetworkPlantProbe, Submodel, SubmodelNetwork, WireSource};
pub use structured::{
    build_modifiers_a, build_modifiers_b, eval_corrected_network, probe_from_plant_closure,
    Structure, StructuredModifierSet, SubmodelCorrection,
};
