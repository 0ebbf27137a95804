use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rto_core::types::{Bounds, Plant, PlantInterface, ProblemSpec};
use rto_core::{default_fd_step, finite_diff_hessian, min_eigenvalue, CoreError, DVec};
use rto_correction::{
    build_modifiers_d, build_modifiers_i, convexify, corrected_model_direct,
    corrected_model_indirect, ConvexMode, ConvexRow, ConvexifiedProblem, CorrectedModel,
    CorrectionError, DirectPlantData, IndirectPlantData,
};
use rto_solver::{solve_nlp, NlpFunctions, NlpOptions, NlpSolution, SolverError};
use thiserror::Error;

use crate::filter::{
    compute_adaptive_filter, variant_gain, FilterContext, FilterState, FilterVariant,
};
use crate::probe::{PlantMeasurement, PlantProbe};
use crate::trace::{RtoTrace, TraceRow};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("augmented problem infeasible at iteration {k}: emergency mode signalled")]
    EmergencySignal { k: usize },

    #[error("solver failure at iteration {k}: {source}")]
    Solver {
        k: usize,
        #[source]
        source: SolverError,
    },

    #[error(transparent)]
    Correction(#[from] CorrectionError),

    #[error(transparent)]
    Core(#[from] CoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    Direct,
    Indirect,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Algorithm {
    /// Plain iterative setpoint optimization; an optional externally fixed
    /// gain turns it into the classical filtered baseline.
    Iso { fixed_gain: Option<f64> },
    /// Modifier + adaptive filter + successive convexification.
    Mfca,
    /// Mfca with the filtered point forced feasible for the unconvexified
    /// updated model.
    Kmfca,
    /// Kmfca with convexification restricted to the concave constraints
    /// that actually influence the step.
    Kmfcaa,
}

#[derive(Clone)]
pub struct DriverConfig {
    pub algorithm: Algorithm,
    pub structure: Structure,
    pub variant: FilterVariant,
    pub k_o: f64,
    /// Convergence threshold per axis; measured by a model-vs-model run
    /// when absent.
    pub threshold: Option<DVec>,
    pub max_iter: usize,
    /// Activity threshold of the concave-constraint selector (< 0, near 0).
    pub caid_threshold: f64,
    pub nlp: NlpOptions,
}

impl DriverConfig {
    pub fn new(algorithm: Algorithm, structure: Structure) -> Self {
        DriverConfig {
            algorithm,
            structure,
            variant: FilterVariant::OptimalUnbounded,
            k_o: 0.1,
            threshold: None,
            max_iter: 60,
            caid_threshold: -1e-6,
            nlp: NlpOptions::default(),
        }
    }
}

/// Corrected model with the input box appended as affine constraint rows,
/// so bound feasibility is part of every model-based decision.
struct ExtendedModel {
    model: CorrectedModel,
    n_g_spec: usize,
}

fn extend_with_bounds(model: CorrectedModel, bounds: &Bounds) -> ExtendedModel {
    let n_g_spec = model.n_g;
    let n_u = bounds.dim();
    let inner_g = model.g.clone();
    let lo = bounds.lower.clone();
    let hi = bounds.upper.clone();
    let g: Arc<dyn Fn(&DVec) -> DVec + Send + Sync> = Arc::new(move |u: &DVec| {
        let base = inner_g(u);
        let mut all = DVector::zeros(n_g_spec + 2 * n_u);
        for i in 0..n_g_spec {
            all[i] = base[i];
        }
        for i in 0..n_u {
            all[n_g_spec + i] = u[i] - hi[i];
            all[n_g_spec + n_u + i] = lo[i] - u[i];
        }
        all
    });
    ExtendedModel {
        model: CorrectedModel {
            phi: model.phi,
            g,
            f: model.f,
            n_g: n_g_spec + 2 * n_u,
        },
        n_g_spec,
    }
}

fn build_corrected(
    spec: &ProblemSpec,
    structure: Structure,
    m: &PlantMeasurement,
    u_k: &DVec,
) -> Result<CorrectedModel, DriverError> {
    Ok(match structure {
        Structure::Direct => {
            let mods = build_modifiers_d(
                spec,
                &DirectPlantData {
                    cost_gradient: m.cost_gradient.clone(),
                    constraint_values: m.constraint_values.clone(),
                    constraint_jacobian: m.constraint_jacobian.clone(),
                },
                u_k,
            )?;
            corrected_model_direct(spec, &mods)
        }
        Structure::Indirect => {
            let mods = build_modifiers_i(
                spec,
                &IndirectPlantData {
                    outputs: m.outputs.clone(),
                    output_jacobian: m.output_jacobian.clone(),
                },
                u_k,
            )?;
            corrected_model_indirect(spec, &mods)
        }
    })
}

/// Concave-active-constraint identification: indices of rows that are not
/// positive semidefinite at the anchor and are active beyond `b` at the
/// applied or optimizer point.
pub fn caid(
    g_k: &dyn Fn(&DVec) -> DVec,
    n_g: usize,
    u_k: &DVec,
    u_next: &DVec,
    u_star: &DVec,
    b: f64,
) -> Vec<usize> {
    let h = default_fd_step(u_k);
    let g_next = g_k(u_next);
    let g_star = g_k(u_star);
    let mut selected = vec![];
    for i in 0..n_g {
        let hess = match finite_diff_hessian(|u: &DVec| g_k(u)[i], u_k, &h) {
            Ok(m) => m,
            Err(_) => continue,
        };
        let scale = hess.amax().max(1.0);
        let concave = min_eigenvalue(&hess) < -1e-6 * scale;
        if concave && (g_next[i] >= b || g_star[i] >= b) {
            selected.push(i);
        }
    }
    selected
}

/// One branch of the gain-embedded problem: affine conditions on the slope
/// estimate plus the gain expression valid inside.
enum GainBranch {
    Const(f64),
    /// gain = 1 / (1 - nab), within the row bounds.
    Reciprocal,
    /// gain = 2 / (1 - nab) - 0.1.
    MaximalExpr,
}

struct Branch {
    gain: GainBranch,
    /// Affine rows on nab(u): (low, high) bounds, either side optional.
    nab_low: Option<f64>,
    nab_high: Option<f64>,
}

fn branches_for(variant: FilterVariant, k_o: f64, delta_min: f64) -> Vec<Branch> {
    const EPS: f64 = 1e-6;
    match variant {
        FilterVariant::OptimalUnbounded => vec![
            Branch {
                gain: GainBranch::Const(1.0),
                nab_low: Some(1.0),
                nab_high: None,
            },
            Branch {
                gain: GainBranch::Const(k_o),
                nab_low: None,
                nab_high: Some(1.0 - 1.0 / k_o),
            },
            Branch {
                gain: GainBranch::Reciprocal,
                nab_low: Some(1.0 - 1.0 / k_o),
                nab_high: Some(1.0 - EPS),
            },
        ],
        FilterVariant::Capped => vec![
            Branch {
                gain: GainBranch::Const(1.0),
                nab_low: Some(0.0),
                nab_high: None,
            },
            Branch {
                gain: GainBranch::Const(k_o),
                nab_low: None,
                nab_high: Some(1.0 - 1.0 / k_o),
            },
            Branch {
                gain: GainBranch::Reciprocal,
                nab_low: Some(1.0 - 1.0 / k_o),
                nab_high: Some(0.0),
            },
        ],
        FilterVariant::Maximal => vec![
            Branch {
                gain: GainBranch::Const(1.0),
                nab_low: Some(1.0),
                nab_high: None,
            },
            Branch {
                gain: GainBranch::Const(k_o),
                nab_low: None,
                nab_high: Some(1.0 - 2.0 / (k_o + 0.1)),
            },
            Branch {
                gain: GainBranch::MaximalExpr,
                nab_low: Some(1.0 - 2.0 / (k_o + 0.1)),
                nab_high: Some(1.0 - EPS),
            },
        ],
        FilterVariant::Superstable => {
            let cap = if delta_min < 1.0 {
                2.0 / (1.0 - delta_min)
            } else {
                f64::INFINITY
            };
            if !cap.is_finite() {
                return branches_for(FilterVariant::OptimalUnbounded, k_o, f64::INFINITY);
            }
            // 1/(1-nab) reaches the cap at nab = 1 - 1/cap.
            let knee = 1.0 - 1.0 / cap;
            vec![
                Branch {
                    gain: GainBranch::Const(cap.max(k_o).min(1.0)),
                    nab_low: Some(1.0),
                    nab_high: None,
                },
                Branch {
                    gain: GainBranch::Const(k_o),
                    nab_low: None,
                    nab_high: Some(1.0 - 1.0 / k_o),
                },
                Branch {
                    gain: GainBranch::Reciprocal,
                    nab_low: Some(1.0 - 1.0 / k_o),
                    nab_high: Some(knee),
                },
                Branch {
                    gain: GainBranch::Const(cap.max(k_o)),
                    nab_low: Some(knee),
                    nab_high: Some(1.0 - EPS),
                },
            ]
        }
    }
}

struct AugmentedOutcome {
    solution: NlpSolution,
    gain: f64,
    /// Multipliers on the model rows and on the filtered rows.
    lambda_model: DVec,
    lambda_filtered: DVec,
}

/// Solve the gain-embedded problem: minimize the convexified cost subject
/// to the chosen model rows and to feasibility of the filtered point under
/// the unconvexified updated model. The piecewise gain definition is
/// handled by solving once per branch and keeping the feasible best.
#[allow(clippy::too_many_arguments)]
fn solve_augmented(
    cost: &dyn Fn(&DVec) -> f64,
    cost_grad: Option<&(dyn Fn(&DVec) -> DVec + Sync)>,
    model_rows: &dyn Fn(&DVec) -> DVec,
    n_model_rows: usize,
    raw_g: &dyn Fn(&DVec) -> DVec,
    n_raw: usize,
    state: &FilterState,
    k: usize,
    u_k: &DVec,
    u_prev: Option<&DVec>,
    u_star_prev: &DVec,
    variant: FilterVariant,
    nlp: &NlpOptions,
) -> Result<AugmentedOutcome, DriverError> {
    let small_step = match u_prev {
        None => true,
        Some(p) => u_k
            .iter()
            .zip(p.iter())
            .zip(state.threshold.iter())
            .all(|((a, b), t)| (a - b).abs() <= *t),
    };

    let du = u_prev.map(|p| u_k - p);
    let nab = |u: &DVec| -> f64 {
        match &du {
            None => f64::INFINITY,
            Some(d) => {
                let n2 = d.norm_squared();
                if n2 == 0.0 {
                    f64::INFINITY
                } else {
                    d.dot(&(u - u_star_prev)) / n2
                }
            }
        }
    };

    let branch_list: Vec<Branch> = if k == 0 {
        vec![Branch {
            gain: GainBranch::Const(state.k_o),
            nab_low: None,
            nab_high: None,
        }]
    } else if small_step {
        vec![Branch {
            gain: GainBranch::Const(state.gain),
            nab_low: None,
            nab_high: None,
        }]
    } else {
        branches_for(variant, state.k_o, state.delta_est)
    };

    let mut best: Option<(AugmentedOutcome, f64)> = None;
    for br in &branch_list {
        let gain_of = |u: &DVec| -> f64 {
            match br.gain {
                GainBranch::Const(c) => c,
                GainBranch::Reciprocal => {
                    let n = nab(u);
                    state.k_o.max(1.0 / (1.0 - n.min(1.0 - 1e-12)))
                }
                GainBranch::MaximalExpr => {
                    let n = nab(u);
                    state.k_o.max(2.0 / (1.0 - n.min(1.0 - 1e-12)) - 0.1)
                }
            }
        };
        let n_branch_rows = br.nab_low.is_some() as usize + br.nab_high.is_some() as usize;
        let n_rows = n_model_rows + n_raw + n_branch_rows;
        // Branch rows in unnormalized form (scaled by the squared step) so
        // their gradients stay O(1) even for tiny steps.
        let n2 = du.as_ref().map(|d| d.norm_squared()).unwrap_or(1.0);
        let rows = |u: &DVec| -> DVec {
            let mut out = DVector::zeros(n_rows);
            let base = model_rows(u);
            for i in 0..n_model_rows {
                out[i] = base[i];
            }
            let gain = gain_of(u);
            let filtered = u_k + (u - u_k) * gain;
            let gf = raw_g(&filtered);
            for i in 0..n_raw {
                out[n_model_rows + i] = gf[i];
            }
            let mut r = n_model_rows + n_raw;
            if let Some(lo) = br.nab_low {
                out[r] = (lo - nab(u)) * n2;
                r += 1;
            }
            if let Some(hi) = br.nab_high {
                out[r] = (nab(u) - hi) * n2;
            }
            out
        };
        let funcs = NlpFunctions {
            cost: Box::new(cost),
            cost_grad: cost_grad.map(|g| Box::new(move |u: &DVec| g(u)) as _),
            constraints: Box::new(rows),
            constraints_jac: None,
            n_g: n_rows,
        };
        let sol = match solve_nlp(&funcs, u_k, nlp) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let vals = (funcs.constraints)(&sol.u_star);
        let feasible = vals.iter().all(|v| *v <= 1e-7);
        if !feasible {
            continue;
        }
        // Prefer stationary candidates: a fallback iterate may sit lower
        // but carries no usable multipliers.
        let stationary = sol.kkt_residual <= 1e-5;
        let obj = sol.objective;
        let better = match &best {
            None => true,
            Some((prev, b)) => {
                let prev_stationary = prev.solution.kkt_residual <= 1e-5;
                match (stationary, prev_stationary) {
                    (true, false) => true,
                    (false, true) => false,
                    _ => obj < *b - 1e-12,
                }
            }
        };
        if better {
            let gain = gain_of(&sol.u_star);
            let lambda_model = DVector::from_iterator(
                n_model_rows,
                (0..n_model_rows).map(|i| sol.multipliers[i]),
            );
            let lambda_filtered = DVector::from_iterator(
                n_raw,
                (0..n_raw).map(|i| sol.multipliers[n_model_rows + i]),
            );
            best = Some((
                AugmentedOutcome {
                    solution: sol,
                    gain,
                    lambda_model,
                    lambda_filtered,
                },
                obj,
            ));
        }
    }
    match best {
        Some((outcome, _)) => Ok(outcome),
        None => Err(DriverError::EmergencySignal { k }),
    }
}

/// Quadratic-data NLP solve of a convexified problem (analytic cost
/// gradient; rows evaluated through the convexified container).
fn solve_convexified(
    conv: &ConvexifiedProblem,
    u_k: &DVec,
    nlp: &NlpOptions,
) -> Result<NlpSolution, SolverError> {
    let cost = |u: &DVec| conv.cost_at(u);
    let grad = |u: &DVec| conv.cost.grad(u);
    let rows = |u: &DVec| conv.rows_at(u);
    let funcs = NlpFunctions {
        cost: Box::new(cost),
        cost_grad: Some(Box::new(grad)),
        constraints: Box::new(rows),
        constraints_jac: None,
        n_g: conv.n_g,
    };
    solve_nlp(&funcs, u_k, nlp)
}

pub struct StepOutcome {
    pub u_star: DVec,
    pub gain: f64,
    pub u_next: DVec,
    pub solution: NlpSolution,
    /// Plant-side multipliers on the model constraint rows (including the
    /// input box rows).
    pub plant_multipliers: DVec,
    /// Updated-model constraints at the applied point.
    pub model_g_at_applied: DVec,
    pub caid_set: Vec<usize>,
}

/// Unfiltered setpoint step: optimize the corrected (unconvexified) model;
/// an externally fixed gain can shrink the applied move.
pub fn iso_step(
    spec: &ProblemSpec,
    structure: Structure,
    m: &PlantMeasurement,
    u_k: &DVec,
    fixed_gain: Option<f64>,
    nlp: &NlpOptions,
) -> Result<StepOutcome, DriverError> {
    let ext = extend_with_bounds(build_corrected(spec, structure, m, u_k)?, &spec.bounds);
    let phi = ext.model.phi.clone();
    let g = ext.model.g.clone();
    let funcs = NlpFunctions {
        cost: Box::new(move |u: &DVec| phi(u)),
        cost_grad: None,
        constraints: Box::new(move |u: &DVec| g(u)),
        constraints_jac: None,
        n_g: ext.model.n_g,
    };
    let sol = solve_nlp(&funcs, u_k, nlp).map_err(|e| DriverError::Solver { k: 0, source: e })?;
    let gain = fixed_gain.unwrap_or(1.0);
    let u_next = u_k + (&sol.u_star - u_k) * gain;
    let model_g_at_applied = (ext.model.g)(&u_next);
    Ok(StepOutcome {
        u_star: sol.u_star.clone(),
        gain,
        u_next,
        plant_multipliers: sol.multipliers.clone(),
        solution: sol,
        model_g_at_applied,
        caid_set: vec![],
    })
}

/// Modifier + successive convexification + adaptive filter.
pub fn mfca_step(
    spec: &ProblemSpec,
    structure: Structure,
    state: &mut FilterState,
    k: usize,
    u_k: &DVec,
    u_prev: Option<&DVec>,
    m: &PlantMeasurement,
    variant: FilterVariant,
    nlp: &NlpOptions,
) -> Result<StepOutcome, DriverError> {
    let ext = extend_with_bounds(build_corrected(spec, structure, m, u_k)?, &spec.bounds);
    let subset: Vec<usize> = (0..ext.n_g_spec).collect();
    let conv = convexify(&ext.model, u_k, ConvexMode::Successive, Some(&subset))?;
    let sol = solve_convexified(&conv, u_k, nlp)
        .map_err(|e| DriverError::Solver { k, source: e })?;
    let u_star_prev = state
        .history
        .last()
        .map(|(_, s)| s.clone())
        .unwrap_or_else(|| u_k.clone());
    let gain = compute_adaptive_filter(
        state,
        &FilterContext {
            k,
            u_k,
            u_prev,
            u_star_next: &sol.u_star,
            u_star_prev: &u_star_prev,
        },
        variant,
    );
    let u_next = u_k + (&sol.u_star - u_k) * gain;
    let model_g_at_applied = (ext.model.g)(&u_next);
    Ok(StepOutcome {
        u_star: sol.u_star.clone(),
        gain,
        u_next,
        plant_multipliers: sol.multipliers.clone(),
        solution: sol,
        model_g_at_applied,
        caid_set: vec![],
    })
}

/// Filter-based constraints: the optimizer must make the *applied*
/// (filtered) point feasible for the unconvexified updated model.
#[allow(clippy::too_many_arguments)]
pub fn kmfca_step(
    spec: &ProblemSpec,
    structure: Structure,
    state: &mut FilterState,
    k: usize,
    u_k: &DVec,
    u_prev: Option<&DVec>,
    m: &PlantMeasurement,
    variant: FilterVariant,
    nlp: &NlpOptions,
) -> Result<StepOutcome, DriverError> {
    let ext = extend_with_bounds(build_corrected(spec, structure, m, u_k)?, &spec.bounds);
    let subset: Vec<usize> = (0..ext.n_g_spec).collect();
    let conv = convexify(&ext.model, u_k, ConvexMode::Successive, Some(&subset))?;
    let u_star_prev = state
        .history
        .last()
        .map(|(_, s)| s.clone())
        .unwrap_or_else(|| u_k.clone());
    let raw_g = ext.model.g.clone();
    let outcome = solve_augmented(
        &|u| conv.cost_at(u),
        Some(&|u: &DVec| conv.cost.grad(u)),
        &|u| conv.rows_at(u),
        conv.n_g,
        &|u| raw_g(u),
        ext.model.n_g,
        state,
        k,
        u_k,
        u_prev,
        &u_star_prev,
        variant,
        nlp,
    )?;
    finish_filtered_step(state, k, u_k, u_prev, &u_star_prev, ext, outcome, variant, vec![])
}

/// Active-curvature selection: first pass with the raw updated rows, then
/// re-solve with convexified rows only for the concave constraints that
/// influenced the step.
#[allow(clippy::too_many_arguments)]
pub fn kmfcaa_step(
    spec: &ProblemSpec,
    structure: Structure,
    state: &mut FilterState,
    k: usize,
    u_k: &DVec,
    u_prev: Option<&DVec>,
    m: &PlantMeasurement,
    variant: FilterVariant,
    caid_threshold: f64,
    nlp: &NlpOptions,
) -> Result<StepOutcome, DriverError> {
    let ext = extend_with_bounds(build_corrected(spec, structure, m, u_k)?, &spec.bounds);
    let subset: Vec<usize> = (0..ext.n_g_spec).collect();
    let conv = convexify(&ext.model, u_k, ConvexMode::Successive, Some(&subset))?;
    let u_star_prev = state
        .history
        .last()
        .map(|(_, s)| s.clone())
        .unwrap_or_else(|| u_k.clone());
    let raw_g = ext.model.g.clone();

    // First pass: raw rows both as model rows and on the filtered point.
    let first = solve_augmented(
        &|u| conv.cost_at(u),
        Some(&|u: &DVec| conv.cost.grad(u)),
        &|u| raw_g(u),
        ext.model.n_g,
        &|u| raw_g(u),
        ext.model.n_g,
        state,
        k,
        u_k,
        u_prev,
        &u_star_prev,
        variant,
        nlp,
    )?;
    let u_star_1 = first.solution.u_star.clone();
    let u_next_1 = u_k + (&u_star_1 - u_k) * first.gain;

    let g_for_caid = ext.model.g.clone();
    let selected = caid(
        &move |u: &DVec| g_for_caid(u),
        ext.model.n_g,
        u_k,
        &u_next_1,
        &u_star_1,
        caid_threshold,
    );

    let outcome = if selected.is_empty() {
        first
    } else {
        // Re-solve with the selected rows convexified, the rest raw.
        let conv_rows = conv.rows.clone();
        let sel = selected.clone();
        let raw_g2 = ext.model.g.clone();
        let mixed_rows = move |u: &DVec| -> DVec {
            let raw = raw_g2(u);
            DVector::from_iterator(
                raw.len(),
                (0..raw.len()).map(|i| {
                    if sel.contains(&i) {
                        match &conv_rows[i] {
                            ConvexRow::Quadratic(q) => q.eval(u),
                            ConvexRow::Kept(_) => raw[i],
                        }
                    } else {
                        raw[i]
                    }
                }),
            )
        };
        solve_augmented(
            &|u| conv.cost_at(u),
            Some(&|u: &DVec| conv.cost.grad(u)),
            &mixed_rows,
            ext.model.n_g,
            &|u| raw_g(u),
            ext.model.n_g,
            state,
            k,
            u_k,
            u_prev,
            &u_star_prev,
            variant,
            nlp,
        )?
    };
    finish_filtered_step(
        state,
        k,
        u_k,
        u_prev,
        &u_star_prev,
        ext,
        outcome,
        variant,
        selected,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish_filtered_step(
    state: &mut FilterState,
    k: usize,
    u_k: &DVec,
    u_prev: Option<&DVec>,
    u_star_prev: &DVec,
    ext: ExtendedModel,
    outcome: AugmentedOutcome,
    variant: FilterVariant,
    caid_set: Vec<usize>,
) -> Result<StepOutcome, DriverError> {
    let u_star = outcome.solution.u_star.clone();
    let gain = outcome.gain;
    // Track the slope estimate so later small-step iterations can reuse the
    // gain, and the superstability bound stays informed.
    if k > 0 {
        if let Some(p) = u_prev {
            let nab = crate::filter::nabla_estimate(u_k, p, &u_star, u_star_prev);
            state.nabla_est = Some(nab);
            if nab.is_finite() {
                state.delta_est = state.delta_est.min(nab);
            }
            let _ = variant_gain(variant, nab, state.delta_est, state.k_o);
        }
    }
    state.gain = gain;
    let u_next = u_k + (&u_star - u_k) * gain;
    let model_g_at_applied = (ext.model.g)(&u_next);
    let plant_multipliers = &outcome.lambda_model + &outcome.lambda_filtered * gain;
    Ok(StepOutcome {
        u_star,
        gain,
        u_next,
        solution: outcome.solution,
        plant_multipliers,
        model_g_at_applied,
        caid_set,
    })
}

#[derive(Debug)]
pub struct RunResult {
    pub trace: RtoTrace,
    pub u_final: DVec,
    pub converged: bool,
    pub iterations: usize,
    /// Plant-side multipliers of the last step (model rows + box rows).
    pub final_multipliers: DVec,
}

/// One scenario driver: owns the filter state and the iteration loop.
pub struct Driver {
    pub config: DriverConfig,
    pub state: FilterState,
    pub u_k: DVec,
    pub u_prev: Option<DVec>,
    pub k: usize,
}

impl Driver {
    pub fn new(config: DriverConfig, u0: &DVec, threshold: DVec) -> Self {
        let state = FilterState::new(config.k_o, threshold, u0);
        Driver {
            config,
            state,
            u_k: u0.clone(),
            u_prev: None,
            k: 0,
        }
    }

    pub fn step(
        &mut self,
        spec: &ProblemSpec,
        probe: &dyn PlantProbe,
    ) -> Result<StepOutcome, DriverError> {
        let m = probe.measure(&self.u_k)?;
        let out = match self.config.algorithm {
            Algorithm::Iso { fixed_gain } => iso_step(
                spec,
                self.config.structure,
                &m,
                &self.u_k,
                fixed_gain,
                &self.config.nlp,
            )?,
            Algorithm::Mfca => mfca_step(
                spec,
                self.config.structure,
                &mut self.state,
                self.k,
                &self.u_k,
                self.u_prev.as_ref(),
                &m,
                self.config.variant,
                &self.config.nlp,
            )?,
            Algorithm::Kmfca => kmfca_step(
                spec,
                self.config.structure,
                &mut self.state,
                self.k,
                &self.u_k,
                self.u_prev.as_ref(),
                &m,
                self.config.variant,
                &self.config.nlp,
            )?,
            Algorithm::Kmfcaa => kmfcaa_step(
                spec,
                self.config.structure,
                &mut self.state,
                self.k,
                &self.u_k,
                self.u_prev.as_ref(),
                &m,
                self.config.variant,
                self.config.caid_threshold,
                &self.config.nlp,
            )?,
        };
        self.state.history.push((self.u_k.clone(), out.u_star.clone()));
        Ok(out)
    }

    /// Run until the applied step is below the threshold or the iteration
    /// cap is reached.
    pub fn run(
        &mut self,
        spec: &ProblemSpec,
        probe: &dyn PlantProbe,
    ) -> Result<RunResult, DriverError> {
        let mut trace = RtoTrace::default();
        let mut converged = false;
        let mut final_multipliers = DVector::zeros(0);
        for _ in 0..self.config.max_iter {
            let t0 = Instant::now();
            let out = self.step(spec, probe)?;
            let (p_cost, p_g) = probe.plant_cost_constraints(&out.u_next)?;
            let mut violation_magnitude = 0.0_f64;
            for v in p_g.iter() {
                violation_magnitude = violation_magnitude.max(*v);
            }
            for (i, v) in out.u_next.iter().enumerate() {
                violation_magnitude = violation_magnitude
                    .max(v - spec.bounds.upper[i])
                    .max(spec.bounds.lower[i] - v);
            }
            let violation = violation_magnitude > 1e-7;
            trace.push(TraceRow {
                k: self.k,
                u_k: self.u_k.clone(),
                u_star_next: out.u_star.clone(),
                u_next: out.u_next.clone(),
                gain: out.gain,
                nabla_est: self.state.nabla_est,
                plant_cost: p_cost,
                plant_constraints: p_g,
                violation,
                violation_magnitude: violation_magnitude.max(0.0),
                model_constraints_at_applied: out.model_g_at_applied.clone(),
                active_set: out.solution.active_set.clone(),
                solver_iterations: out.solution.iterations,
                duration_s: t0.elapsed().as_secs_f64(),
            });
            final_multipliers = out.plant_multipliers.clone();
            let step_small = out
                .u_next
                .iter()
                .zip(self.u_k.iter())
                .zip(self.state.threshold.iter())
                .all(|((a, b), t)| (a - b).abs() <= *t);
            self.u_prev = Some(self.u_k.clone());
            self.u_k = out.u_next;
            self.k += 1;
            if step_small && self.k > 1 {
                converged = true;
                break;
            }
        }
        if converged {
            // Refresh the multipliers at the converged point: the step just
            // below the threshold forces the constant-gain branch, whose
            // solve is well conditioned.
            if let Ok(out) = self.step(spec, probe) {
                final_multipliers = out.plant_multipliers;
            }
        }
        Ok(RunResult {
            trace,
            u_final: self.u_k.clone(),
            converged,
            iterations: self.k,
            final_multipliers,
        })
    }
}

struct ModelAsPlant {
    spec: ProblemSpec,
}

impl Plant for ModelAsPlant {
    fn n_u(&self) -> usize {
        self.spec.n_u
    }
    fn n_y(&self) -> usize {
        self.spec.n_y
    }
    fn n_d_measured(&self) -> usize {
        0
    }
    fn n_d_unmeasured(&self) -> usize {
        0
    }
    fn noise_std(&self) -> DVec {
        DVector::zeros(self.spec.n_y)
    }
    fn eval_clean(&self, u: &DVec, _d1: &DVec, _d2: &DVec) -> Result<DVec, CoreError> {
        self.spec.model_output(u)
    }
}

/// Measure the convergence threshold once per problem: run the adaptive
/// driver against a perfect model (plant := model) and take 100x the
/// smallest nonzero step observed after settling.
pub fn measure_convergence_threshold(spec: &ProblemSpec, u0: &DVec) -> DVec {
    let plant = PlantInterface::new(Arc::new(ModelAsPlant { spec: spec.clone() }));
    let probe = crate::probe::FdProbe::new(&plant, spec);
    let mut cfg = DriverConfig::new(Algorithm::Mfca, Structure::Direct);
    cfg.max_iter = 20;
    cfg.threshold = Some(DVector::from_element(spec.n_u, 0.0));
    let mut driver = Driver::new(cfg, u0, DVector::from_element(spec.n_u, 0.0));
    let mut min_step = f64::INFINITY;
    if let Ok(res) = driver.run(spec, &probe) {
        for w in res.trace.rows.windows(2) {
            let s = (&w[1].u_next - &w[0].u_next).amax();
            if s > 0.0 {
                min_step = min_step.min(s);
            }
        }
    }
    let a = if min_step.is_finite() {
        (min_step * 100.0).clamp(1e-13, 1e-6)
    } else {
        1e-10
    };
    DVector::from_element(spec.n_u, a)
}
