use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rto_core::types::{Bounds, Plant, ProblemSpec};
use rto_core::{CoreError, DVec};

use crate::examples::ExampleBundle;
use crate::PlantError;

/// Fixed reactor temperature (K) maintained by the thermal control system.
pub const T_REACTOR_K: f64 = 355.72;
/// Mean flowrate of material A (t/h); the measured disturbance d' adds to it.
pub const F_A_MEAN: f64 = 6.577;
/// Nominal recycle ratio (the unmeasured disturbance d'').
pub const ALPHA_NOMINAL: f64 = 0.5499;
/// Column efficiencies: plant and model.
pub const ETA_C_PLANT: f64 = 0.1;
pub const ETA_C_MODEL: f64 = 0.105;
/// Reactor mass holdup in tonnes (flows are t/h).
pub const HOLDUP_T: f64 = 2.105;
/// Measurement noise standard deviation per output sample, t/h
/// (variance 5 (kg/h)^2).
pub const NOISE_STD_T_H: f64 = 2.2360679774997896e-3;
/// Production cap (t/h).
pub const F_P_MAX: f64 = 2.37;

use crate::wo_reactor::{MODEL_A, MODEL_B, PLANT_A, PLANT_B};

fn k_per_hour(a: f64, b: f64) -> f64 {
    a * (-b / T_REACTOR_K).exp()
}

/// CSTR solve shared by plant and model: given inlet mass flows per species
/// and a generation closure, return outlet mass flows.
fn cstr_outlet<G>(m_in: &DVec, gen: G) -> Result<DVec, PlantError>
where
    G: Fn(&DVec) -> DVec,
{
    let n = m_in.len();
    let f_total: f64 = m_in.iter().sum();
    if f_total <= 0.0 {
        return Err(PlantError::SteadyState("no reactor inflow".into()));
    }
    let x_in = m_in / f_total;
    let residual = |x: &DVec| -> DVec {
        let g = gen(x);
        DVector::from_iterator(n, (0..n).map(|i| f_total * (x_in[i] - x[i]) + g[i]))
    };
    // Newton with numeric Jacobian, damped.
    let mut x = x_in.clone();
    for _ in 0..120 {
        let r = residual(&x);
        if r.amax() <= 1e-12 * f_total.max(1.0) {
            break;
        }
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-7 * x[j].abs().max(1e-4);
            let mut xp = x.clone();
            xp[j] += h;
            let rp = residual(&xp);
            for i in 0..n {
                jac[(i, j)] = (rp[i] - r[i]) / h;
            }
        }
        let step = jac
            .lu()
            .solve(&r)
            .ok_or_else(|| PlantError::SteadyState("singular CSTR jacobian".into()))?;
        let mut alpha = 1.0;
        loop {
            let cand = &x - &step * alpha;
            if residual(&cand).amax() < r.amax() || alpha < 1e-4 {
                x = cand;
                break;
            }
            alpha *= 0.5;
        }
    }
    let r = residual(&x);
    if r.amax() > 1e-8 * f_total.max(1.0) {
        return Err(PlantError::SteadyState(format!(
            "CSTR residual {} too large",
            r.amax()
        )));
    }
    Ok(x * f_total)
}

/// Three-reaction generation terms on species [A, B, C, E, G, P].
fn plant_generation(x: &DVec) -> DVec {
    let k1 = k_per_hour(PLANT_A[0], PLANT_B[0]);
    let k2 = k_per_hour(PLANT_A[1], PLANT_B[1]);
    let k3 = k_per_hour(PLANT_A[2], PLANT_B[2]);
    let r1 = k1 * x[0] * x[1] * HOLDUP_T;
    let r2 = k2 * x[1] * x[2] * HOLDUP_T;
    let r3 = k3 * x[2] * x[5] * HOLDUP_T;
    DVector::from_vec(vec![
        -r1,
        -r1 - r2,
        2.0 * r1 - 2.0 * r2 - r3,
        2.0 * r2,
        1.5 * r3,
        r2 - 0.5 * r3,
    ])
}

/// Two-reaction model generation terms on species [A, B, E, G, P].
fn model_generation(x: &DVec) -> DVec {
    let k1 = k_per_hour(MODEL_A[0], MODEL_B[0]);
    let k2 = k_per_hour(MODEL_A[1], MODEL_B[1]);
    let r1 = k1 * x[0] * x[1] * x[1] * HOLDUP_T;
    let r2 = k2 * x[0] * x[1] * x[4] * HOLDUP_T;
    DVector::from_vec(vec![
        -r1 - r2,
        -2.0 * r1 - r2,
        2.0 * r1,
        3.0 * r2,
        r1 - r2,
    ])
}

struct FlowsheetResult {
    f_p: f64,
    f_g: f64,
    f_d: f64,
}

/// Reactor -> ideal decanter (all G removed) -> column (efficiency law)
/// -> recycle split. Solved by damped fixed-point iteration on the recycle
/// stream, with a heavier-damping restart on divergence.
fn flowsheet<G>(
    fresh: &DVec,
    gen: G,
    g_index: usize,
    p_index: usize,
    e_index: usize,
    eta_c: f64,
    alpha: f64,
) -> Result<FlowsheetResult, PlantError>
where
    G: Fn(&DVec) -> DVec + Copy,
{
    let n = fresh.len();
    let run = |damping: f64| -> Result<FlowsheetResult, PlantError> {
        let mut recycle = DVector::zeros(n);
        for it in 0..2000 {
            let m_in = fresh + &recycle;
            let m_out = cstr_outlet(&m_in, gen)?;
            // Decanter: G leaves entirely.
            let f_g = m_out[g_index];
            let mut m_col = m_out.clone();
            m_col[g_index] = 0.0;
            // Column overhead: product P per the efficiency law.
            let f_p = (m_col[p_index] - eta_c * m_col[e_index]).max(0.0);
            let mut m_bot = m_col.clone();
            m_bot[p_index] -= f_p;
            // Split: alpha recycled, the rest purged to fuel.
            let next = &m_bot * alpha;
            let f_d = (1.0 - alpha) * m_bot.iter().sum::<f64>();
            let delta = (&next - &recycle).amax();
            recycle = &recycle * (1.0 - damping) + next * damping;
            if delta < 1e-8 {
                return Ok(FlowsheetResult { f_p, f_g, f_d });
            }
            if !recycle.iter().all(|v| v.is_finite()) || it == 1999 {
                return Err(PlantError::SteadyState(
                    "recycle fixed point diverged".into(),
                ));
            }
        }
        unreachable!()
    };
    run(0.5).or_else(|_| run(0.15))
}

/// Plant steady state at inputs (F_B = u, d' on F_A, recycle ratio alpha):
/// measured outputs (F_P, F_G, F_D, F_A) in t/h.
pub fn wo_plant_steady_state(f_b: f64, d_meas: f64, alpha: f64) -> Result<DVec, PlantError> {
    let f_a = F_A_MEAN + d_meas;
    let mut fresh = DVector::zeros(6);
    fresh[0] = f_a;
    fresh[1] = f_b;
    let r = flowsheet(&fresh, plant_generation, 4, 5, 3, ETA_C_PLANT, alpha)?;
    Ok(DVector::from_vec(vec![r.f_p, r.f_g, r.f_d, f_a]))
}

/// Model steady state (two reactions, model column efficiency, nominal
/// recycle ratio).
pub fn wo_plant_model_outputs(f_b: f64, d_meas: f64) -> Result<DVec, PlantError> {
    let f_a = F_A_MEAN + d_meas;
    let mut fresh = DVector::zeros(5);
    fresh[0] = f_a;
    fresh[1] = f_b;
    let r = flowsheet(
        &fresh,
        model_generation,
        3,
        4,
        2,
        ETA_C_MODEL,
        ALPHA_NOMINAL,
    )?;
    Ok(DVector::from_vec(vec![r.f_p, r.f_g, r.f_d, f_a]))
}

/// Operating cost in $/h; flows in t/h. Outputs ordered
/// (F_P, F_G, F_D, F_A).
pub fn wo_plant_cost(u: &DVec, y: &DVec) -> f64 {
    1000.0 * (0.02 * y[3] + 0.03 * u[0] + 0.01 * y[1] - 0.3 * y[0] - 0.0068 * y[2]) / 0.45
}

/// The simulated plant: u = F_B, measured disturbance d' on F_A, unmeasured
/// disturbance alpha, noisy flow measurements.
pub struct WoPlantSim;

impl Plant for WoPlantSim {
    fn n_u(&self) -> usize {
        1
    }
    fn n_y(&self) -> usize {
        4
    }
    fn n_d_measured(&self) -> usize {
        1
    }
    fn n_d_unmeasured(&self) -> usize {
        1
    }
    fn noise_std(&self) -> DVec {
        DVector::from_element(4, NOISE_STD_T_H)
    }
    fn eval_clean(&self, u: &DVec, d1: &DVec, d2: &DVec) -> Result<DVec, CoreError> {
        wo_plant_steady_state(u[0], d1[0], d2[0])
            .map_err(|e| CoreError::InvalidArgument(format!("wo plant: {e}")))
    }
}

/// The engineer-side model of the plant.
pub struct WoPlantModel;

impl WoPlantModel {
    pub fn outputs(&self, u: f64, d_meas: f64) -> Result<DVec, PlantError> {
        wo_plant_model_outputs(u, d_meas)
    }
}

pub fn wo_plant_bundle() -> ExampleBundle {
    let spec = ProblemSpec::new(
        Arc::new(|u: &DVec, _t: &DVec| {
            wo_plant_model_outputs(u[0], 0.0).expect("wo plant model")
        }),
        DVector::zeros(0),
        Arc::new(wo_plant_cost),
        Arc::new(|_u: &DVec, y: &DVec| DVector::from_vec(vec![y[0] - F_P_MAX])),
        Bounds::new(vec![10.0], vec![20.0]).unwrap(),
        1,
        4,
        1,
        1,
    )
    .expect("wo plant spec");
    ExampleBundle {
        name: "wo-plant".into(),
        plant: Arc::new(WoPlantSim),
        spec,
        optimum: None,
        filter_constants: vec![],
        network: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_recycle_equals_single_pass() {
        let with = wo_plant_steady_state(14.0, 0.0, 0.0).unwrap();
        // alpha = 0: outputs equal the single-pass values; purge carries
        // the whole bottoms.
        let mut fresh = DVector::zeros(6);
        fresh[0] = F_A_MEAN;
        fresh[1] = 14.0;
        let m_out = cstr_outlet(&fresh, plant_generation).unwrap();
        let f_g = m_out[4];
        let f_p = (m_out[5] - ETA_C_PLANT * m_out[3]).max(0.0);
        let f_d: f64 = m_out.iter().sum::<f64>() - f_g - f_p;
        assert!((with[0] - f_p).abs() < 1e-6);
        assert!((with[1] - f_g).abs() < 1e-6);
        assert!((with[2] - f_d).abs() < 1e-6);
    }

    #[test]
    fn mass_balance_closes() {
        for (u, d, a) in [(12.0, 0.0, ALPHA_NOMINAL), (17.5, 0.8, 0.35), (10.5, -0.9, 0.6)] {
            let y = wo_plant_steady_state(u, d, a).unwrap();
            let inflow = F_A_MEAN + d + u;
            let outflow = y[0] + y[1] + y[2];
            assert!(
                ((inflow - outflow) / inflow).abs() < 1e-6,
                "mass balance off at ({u}, {d}, {a}): in {inflow} out {outflow}"
            );
            assert!(y[0] >= 0.0);
        }
    }

    #[test]
    fn steady_state_is_continuous_in_inputs() {
        let y0 = wo_plant_steady_state(15.0, 0.0, ALPHA_NOMINAL).unwrap();
        let y1 = wo_plant_steady_state(15.0 + 1e-6, 0.0, ALPHA_NOMINAL).unwrap();
        assert!((&y1 - &y0).amax() < 1e-4, "branch jump under tiny perturbation");
    }
}
