use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rto_core::{DMat, DVec};

use crate::error::CorrectionError;
use crate::network::{NetworkPlantProbe, SubmodelNetwork, WireSource};

/// Forward-difference step for plant-side probes (noise-free simulated
/// plants, theoretical exact-gradient setting).
const PROBE_STEP: f64 = 1e-6;
/// Singular values below this fraction of the largest are treated as zero
/// in the pseudo-inverse behind the moving-subspace basis.
const PINV_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    /// Submodel outputs corrected as functions of the plant inputs u.
    A,
    /// Submodel outputs corrected as functions of their own inputs z.
    B,
}

/// First-order correction data for one submodel.
#[derive(Debug, Clone)]
pub struct SubmodelCorrection {
    pub structure: Structure,
    /// Plant-side inputs at the anchor.
    pub z_anchor: DVec,
    /// Anchor in u.
    pub u_anchor: DVec,
    /// Output value offset at the anchor.
    pub value_offset: DVec,
    /// Gradient offset: w.r.t. u for structure A (n_out x n_u), w.r.t. z
    /// projected through the basis for structure B (n_out x n_z).
    pub gradient_offset: DMat,
    /// Moving-subspace basis Z_k (structure B only; identity-free for A).
    pub basis: Option<DMat>,
}

/// Per-submodel corrections for a whole network. Structures may be mixed.
#[derive(Debug, Clone)]
pub struct StructuredModifierSet {
    pub corrections: Vec<SubmodelCorrection>,
}

/// A probe backed by a plant closure `u -> y_p` (all measured outputs) and
/// the model's wiring for the mixer/demixer.
pub struct ClosurePlantProbe {
    pub plant: Arc<dyn Fn(&DVec) -> DVec + Send + Sync>,
    pub network: SubmodelNetwork,
}

/// Build a probe from a plant-output closure, reusing the model's wiring to
/// assemble plant-side submodel inputs from measurements.
pub fn probe_from_plant_closure(
    plant: Arc<dyn Fn(&DVec) -> DVec + Send + Sync>,
    network: &SubmodelNetwork,
) -> ClosurePlantProbe {
    ClosurePlantProbe {
        plant,
        network: network.clone(),
    }
}

impl ClosurePlantProbe {
    fn global_output_index(&self, submodel: usize, output: usize) -> Option<usize> {
        self.network
            .outputs
            .iter()
            .position(|(s, o)| *s == submodel && *o == output)
    }
}

impl NetworkPlantProbe for ClosurePlantProbe {
    fn submodel_outputs(&self, i: usize, u: &DVec) -> Result<DVec, CorrectionError> {
        let y_p = (self.plant)(u);
        let sm = &self.network.submodels[i];
        let mut out = DVector::zeros(sm.n_out);
        for o in 0..sm.n_out {
            match self.global_output_index(i, o) {
                Some(g) => out[o] = y_p[g],
                None => {
                    return Err(CorrectionError::UnobservableInput {
                        submodel: i,
                        entry: o,
                        missing: format!("output {o} of submodel '{}'", sm.name),
                    })
                }
            }
        }
        Ok(out)
    }

    fn submodel_inputs(&self, i: usize, u: &DVec) -> Result<DVec, CorrectionError> {
        let y_p = (self.plant)(u);
        let wires = &self.network.wiring[i];
        let mut z = DVector::zeros(wires.len());
        for (e, w) in wires.iter().enumerate() {
            match w {
                WireSource::Input(j) => z[e] = u[*j],
                WireSource::SubmodelOutput { submodel, output } => {
                    match self.global_output_index(*submodel, *output) {
                        Some(g) => z[e] = y_p[g],
                        None => {
                            return Err(CorrectionError::UnobservableInput {
                                submodel: i,
                                entry: e,
                                missing: format!(
                                    "output {output} of submodel '{}'",
                                    self.network.submodels[*submodel].name
                                ),
                            })
                        }
                    }
                }
            }
        }
        Ok(z)
    }

    fn n_u(&self) -> usize {
        self.network.n_u
    }
}

fn forward_jacobian<F>(f: F, u: &DVec, n_out: usize) -> Result<DMat, CorrectionError>
where
    F: Fn(&DVec) -> Result<DVec, CorrectionError>,
{
    let base = f(u)?;
    if base.len() != n_out {
        return Err(CorrectionError::Dimension(format!(
            "probe returned {} values, expected {n_out}",
            base.len()
        )));
    }
    let mut jac = DMatrix::zeros(n_out, u.len());
    let mut up = u.clone();
    for j in 0..u.len() {
        let h = PROBE_STEP * u[j].abs().max(1.0);
        up[j] = u[j] + h;
        let fp = f(&up)?;
        for r in 0..n_out {
            jac[(r, j)] = (fp[r] - base[r]) / h;
        }
        up[j] = u[j];
    }
    Ok(jac)
}

fn model_z_jacobian(
    network: &SubmodelNetwork,
    i: usize,
    z: &DVec,
) -> DMat {
    let sm = &network.submodels[i];
    let mut jac = DMatrix::zeros(sm.n_out, sm.n_in);
    let base = (sm.f)(z);
    let mut zp = z.clone();
    for j in 0..sm.n_in {
        let h = PROBE_STEP * z[j].abs().max(1.0);
        zp[j] = z[j] + h;
        let fp = (sm.f)(&zp);
        for r in 0..sm.n_out {
            jac[(r, j)] = (fp[r] - base[r]) / h;
        }
        zp[j] = z[j];
    }
    jac
}

/// Tolerance-thresholded Moore-Penrose pseudo-inverse.
fn pinv(m: &DMat) -> DMat {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0_f64, |a, b| a.max(*b));
    svd.pseudo_inverse(PINV_RTOL * smax.max(1e-300)).unwrap()
}

/// Correct every submodel to first order as a function of the plant inputs
/// (structure A).
pub fn build_modifiers_a(
    network: &SubmodelNetwork,
    probe: &dyn NetworkPlantProbe,
    u_k: &DVec,
) -> Result<StructuredModifierSet, CorrectionError> {
    network.validate()?;
    let mut corrections = Vec::with_capacity(network.submodels.len());
    for i in 0..network.submodels.len() {
        let sm = &network.submodels[i];
        let z_pk = probe.submodel_inputs(i, u_k)?;
        let y_pk = probe.submodel_outputs(i, u_k)?;
        let grad_u_fp = forward_jacobian(|u| probe.submodel_outputs(i, u), u_k, sm.n_out)?;
        let grad_u_hp = forward_jacobian(|u| probe.submodel_inputs(i, u), u_k, sm.n_in)?;
        let grad_z_f = model_z_jacobian(network, i, &z_pk);
        let model_out = (sm.f)(&z_pk);
        corrections.push(SubmodelCorrection {
            structure: Structure::A,
            z_anchor: z_pk,
            u_anchor: u_k.clone(),
            value_offset: &y_pk - model_out,
            gradient_offset: &grad_u_fp - &grad_z_f * &grad_u_hp,
            basis: None,
        });
    }
    Ok(StructuredModifierSet { corrections })
}

/// Correct every submodel to first order as a function of its own inputs,
/// restricted to the subspace in which those inputs move (structure B).
/// Requires the model-consistency condition to actually match the plant.
pub fn build_modifiers_b(
    network: &SubmodelNetwork,
    probe: &dyn NetworkPlantProbe,
    u_k: &DVec,
) -> Result<StructuredModifierSet, CorrectionError> {
    network.validate()?;
    let mut corrections = Vec::with_capacity(network.submodels.len());
    for i in 0..network.submodels.len() {
        let sm = &network.submodels[i];
        let z_pk = probe.submodel_inputs(i, u_k)?;
        let y_pk = probe.submodel_outputs(i, u_k)?;
        let grad_u_fp = forward_jacobian(|u| probe.submodel_outputs(i, u), u_k, sm.n_out)?;
        let grad_u_hp = forward_jacobian(|u| probe.submodel_inputs(i, u), u_k, sm.n_in)?;
        let grad_z_f = model_z_jacobian(network, i, &z_pk);
        let hp_pinv = pinv(&grad_u_hp);
        // Z_k = grad_u h_p (grad_u h_p)^+ : basis of the moving subspace.
        let basis = &grad_u_hp * &hp_pinv;
        // Measurable surrogate for grad_z f_p restricted to the subspace.
        let plant_z_grad = &grad_u_fp * &hp_pinv;
        let model_out = (sm.f)(&z_pk);
        corrections.push(SubmodelCorrection {
            structure: Structure::B,
            z_anchor: z_pk,
            u_anchor: u_k.clone(),
            value_offset: &y_pk - model_out,
            gradient_offset: plant_z_grad - &grad_z_f * &basis,
            basis: Some(basis),
        });
    }
    Ok(StructuredModifierSet { corrections })
}

/// Evaluate the corrected network: each submodel output gets its additive
/// correction, a function of u (structure A) or of z (structure B).
pub fn eval_corrected_network(
    network: &SubmodelNetwork,
    mods: &StructuredModifierSet,
    u: &DVec,
) -> Result<DVec, CorrectionError> {
    if mods.corrections.len() != network.submodels.len() {
        return Err(CorrectionError::Dimension(
            "one correction per submodel required".into(),
        ));
    }
    network.eval_with(u, &|i, z, u_now| {
        let c = &mods.corrections[i];
        match c.structure {
            Structure::A => &c.value_offset + &c.gradient_offset * (u_now - &c.u_anchor),
            Structure::B => &c.value_offset + &c.gradient_offset * (z - &c.z_anchor),
        }
    })
}
