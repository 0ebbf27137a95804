use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rto_core::{
    default_fd_step, finite_diff_gradient, finite_diff_jacobian, types::ProblemSpec, DMat, DVec,
};

use crate::error::CorrectionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffineStructure {
    Direct,
    Indirect,
}

/// Affine correction attached to a model at an anchor point. Direct sets
/// the output modifiers to zero; indirect sets the cost/constraint
/// modifiers to zero.
#[derive(Debug, Clone)]
pub struct AffineModifierSet {
    pub anchor: DVec,
    /// Cost gradient modifier (direct only).
    pub cost_gradient: DVec,
    /// Constraint value offsets (direct only).
    pub constraint_offset: DVec,
    /// Constraint gradient modifiers (direct only).
    pub constraint_gradient: DMat,
    /// Output value offsets (indirect only).
    pub output_offset: DVec,
    /// Output gradient modifiers (indirect only).
    pub output_gradient: DMat,
    pub structure: AffineStructure,
}

/// Plant measurements feeding the direct structure at the anchor.
#[derive(Debug, Clone)]
pub struct DirectPlantData {
    pub cost_gradient: DVec,
    pub constraint_values: DVec,
    pub constraint_jacobian: DMat,
}

/// Plant measurements feeding the indirect structure at the anchor.
#[derive(Debug, Clone)]
pub struct IndirectPlantData {
    pub outputs: DVec,
    pub output_jacobian: DMat,
}

/// A corrected model: closures for the corrected cost, constraints and
/// (for output-side structures) outputs. Immutable and shareable.
#[derive(Clone)]
pub struct CorrectedModel {
    pub phi: Arc<dyn Fn(&DVec) -> f64 + Send + Sync>,
    pub g: Arc<dyn Fn(&DVec) -> DVec + Send + Sync>,
    pub f: Option<Arc<dyn Fn(&DVec) -> DVec + Send + Sync>>,
    pub n_g: usize,
}

impl CorrectedModel {
    pub fn phi_at(&self, u: &DVec) -> f64 {
        (self.phi)(u)
    }
    pub fn g_at(&self, u: &DVec) -> DVec {
        (self.g)(u)
    }
}

/// First-order matching of the composed cost and constraints at the anchor
/// (direct structure).
pub fn build_modifiers_d(
    spec: &ProblemSpec,
    plant: &DirectPlantData,
    u_k: &DVec,
) -> Result<AffineModifierSet, CorrectionError> {
    check_len(u_k.len(), spec.n_u, "anchor")?;
    check_len(plant.cost_gradient.len(), spec.n_u, "plant cost gradient")?;
    check_len(plant.constraint_values.len(), spec.n_g, "plant constraints")?;
    if plant.constraint_jacobian.nrows() != spec.n_g
        || plant.constraint_jacobian.ncols() != spec.n_u
    {
        return Err(CorrectionError::Dimension(
            "plant constraint jacobian shape".into(),
        ));
    }
    let h = default_fd_step(u_k);
    let model_cost_grad = finite_diff_gradient(
        |u: &DVec| spec.nominal_cost(u).expect("model cost"),
        u_k,
        &h,
    )?;
    let model_g = spec.nominal_constraints(u_k)?;
    let model_g_jac = finite_diff_jacobian(
        |u: &DVec| spec.nominal_constraints(u).expect("model constraints"),
        u_k,
        &h,
        spec.n_g,
    )?;
    Ok(AffineModifierSet {
        anchor: u_k.clone(),
        cost_gradient: &plant.cost_gradient - model_cost_grad,
        constraint_offset: &plant.constraint_values - model_g,
        constraint_gradient: &plant.constraint_jacobian - model_g_jac,
        output_offset: DVector::zeros(spec.n_y),
        output_gradient: DMatrix::zeros(spec.n_y, spec.n_u),
        structure: AffineStructure::Direct,
    })
}

/// First-order matching of the model outputs at the anchor (indirect
/// structure); the composed cost and constraints then match by the
/// composed-function correction property.
pub fn build_modifiers_i(
    spec: &ProblemSpec,
    plant: &IndirectPlantData,
    u_k: &DVec,
) -> Result<AffineModifierSet, CorrectionError> {
    check_len(u_k.len(), spec.n_u, "anchor")?;
    check_len(plant.outputs.len(), spec.n_y, "plant outputs")?;
    if plant.output_jacobian.nrows() != spec.n_y || plant.output_jacobian.ncols() != spec.n_u {
        return Err(CorrectionError::Dimension("plant output jacobian shape".into()));
    }
    let h = default_fd_step(u_k);
    let model_y = spec.model_output(u_k)?;
    let model_jac = finite_diff_jacobian(
        |u: &DVec| spec.model_output(u).expect("model output"),
        u_k,
        &h,
        spec.n_y,
    )?;
    Ok(AffineModifierSet {
        anchor: u_k.clone(),
        cost_gradient: DVector::zeros(spec.n_u),
        constraint_offset: DVector::zeros(spec.n_g),
        constraint_gradient: DMatrix::zeros(spec.n_g, spec.n_u),
        output_offset: &plant.outputs - model_y,
        output_gradient: &plant.output_jacobian - model_jac,
        structure: AffineStructure::Indirect,
    })
}

/// Zeroth-order emergency correction from a single (possibly transient)
/// measurement: offsets only, gradients untouched. Direct corrects the
/// constraints; indirect corrects the outputs.
pub fn build_emergency_correction(
    spec: &ProblemSpec,
    structure: AffineStructure,
    last_measurement: &DVec,
    u_k: &DVec,
) -> Result<AffineModifierSet, CorrectionError> {
    check_len(u_k.len(), spec.n_u, "anchor")?;
    check_len(last_measurement.len(), spec.n_y, "measurement")?;
    let model_y = spec.model_output(u_k)?;
    match structure {
        AffineStructure::Direct => {
            let g_meas = (spec.constraints)(u_k, last_measurement);
            let g_model = (spec.constraints)(u_k, &model_y);
            Ok(AffineModifierSet {
                anchor: u_k.clone(),
                cost_gradient: DVector::zeros(spec.n_u),
                constraint_offset: g_meas - g_model,
                constraint_gradient: DMatrix::zeros(spec.n_g, spec.n_u),
                output_offset: DVector::zeros(spec.n_y),
                output_gradient: DMatrix::zeros(spec.n_y, spec.n_u),
                structure,
            })
        }
        AffineStructure::Indirect => Ok(AffineModifierSet {
            anchor: u_k.clone(),
            cost_gradient: DVector::zeros(spec.n_u),
            constraint_offset: DVector::zeros(spec.n_g),
            constraint_gradient: DMatrix::zeros(spec.n_g, spec.n_u),
            output_offset: last_measurement - model_y,
            output_gradient: DMatrix::zeros(spec.n_y, spec.n_u),
            structure,
        }),
    }
}

/// Corrected model for the direct structure:
/// `phi_k(u) = phi(u, f(u)) + lambda'(u - u_k)` and
/// `g_k(u) = g(u, f(u)) + eps + Lambda (u - u_k)`.
pub fn corrected_model_direct(spec: &ProblemSpec, m: &AffineModifierSet) -> CorrectedModel {
    let spec_phi = spec.clone();
    let spec_g = spec.clone();
    let anchor = m.anchor.clone();
    let lam_phi = m.cost_gradient.clone();
    let eps_g = m.constraint_offset.clone();
    let lam_g = m.constraint_gradient.clone();
    let anchor_g = m.anchor.clone();
    CorrectedModel {
        phi: Arc::new(move |u: &DVec| {
            spec_phi.nominal_cost(u).unwrap_or(f64::INFINITY) + lam_phi.dot(&(u - &anchor))
        }),
        g: Arc::new(move |u: &DVec| {
            let base = spec_g
                .nominal_constraints(u)
                .unwrap_or_else(|_| DVector::from_element(spec_g.n_g, f64::INFINITY));
            base + &eps_g + &lam_g * (u - &anchor_g)
        }),
        f: None,
        n_g: spec.n_g,
    }
}

/// Corrected model for the indirect structure:
/// `f_k(u) = f(u) + eps + Lambda (u - u_k)`, cost and constraints composed.
pub fn corrected_model_indirect(spec: &ProblemSpec, m: &AffineModifierSet) -> CorrectedModel {
    let anchor = m.anchor.clone();
    let eps_f = m.output_offset.clone();
    let lam_f = m.output_gradient.clone();
    let spec_f = spec.clone();
    let f_k: Arc<dyn Fn(&DVec) -> DVec + Send + Sync> = Arc::new(move |u: &DVec| {
        let base = spec_f
            .model_output(u)
            .unwrap_or_else(|_| DVector::from_element(spec_f.n_y, f64::NAN));
        base + &eps_f + &lam_f * (u - &anchor)
    });
    let f_phi = f_k.clone();
    let f_g = f_k.clone();
    let cost = spec.cost.clone();
    let cons = spec.constraints.clone();
    CorrectedModel {
        phi: Arc::new(move |u: &DVec| cost(u, &f_phi(u))),
        g: Arc::new(move |u: &DVec| cons(u, &f_g(u))),
        f: Some(f_k),
        n_g: spec.n_g,
    }
}

fn check_len(got: usize, expected: usize, what: &str) -> Result<(), CorrectionError> {
    if got != expected {
        Err(CorrectionError::Dimension(format!(
            "{what}: expected {expected}, got {got}"
        )))
    } else {
        Ok(())
    }
}
