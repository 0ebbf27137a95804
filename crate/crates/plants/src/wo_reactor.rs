use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rto_core::types::{Bounds, Plant, ProblemSpec};
use rto_core::{CoreError, DVec};

use crate::examples::ExampleBundle;
use crate::PlantError;

/// Plant kinetic frequency factors (1/h) and activation temperatures (K).
pub const PLANT_A: [f64; 3] = [5.975e9, 2.596e12, 9.628e15];
pub const PLANT_B: [f64; 3] = [6.666e3, 8.333e3, 1.111e4];
/// Two-reaction model kinetics.
pub const MODEL_A: [f64; 2] = [7.8812e11, 1.5515e17];
pub const MODEL_B: [f64; 2] = [8.0776e3, 1.2438e4];
/// Reactor mass holdup (kg); flows are in kg/s.
pub const HOLDUP_KG: f64 = 2105.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WoMode {
    /// Upper bound on the G fraction active.
    Mode1,
    /// No composition constraint.
    Mode2,
}

fn arrhenius_per_second(a_per_hour: f64, b_kelvin: f64, t_celsius: f64) -> f64 {
    (a_per_hour / 3600.0) * (-b_kelvin / (t_celsius + 273.15)).exp()
}

/// Damped Newton on a small residual system with numeric Jacobian.
fn newton_solve<F>(
    residual: F,
    x0: &DVec,
    tol: f64,
    max_iter: usize,
) -> Result<DVec, PlantError>
where
    F: Fn(&DVec) -> DVec,
{
    let n = x0.len();
    let mut x = x0.clone();
    for _ in 0..max_iter {
        let r = residual(&x);
        if r.amax() <= tol {
            return Ok(x);
        }
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-7 * x[j].abs().max(1e-3);
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
            .ok_or_else(|| PlantError::SteadyState("singular reactor jacobian".into()))?;
        // Damp to keep fractions physical.
        let mut alpha = 1.0;
        for _ in 0..30 {
            let cand = &x - &step * alpha;
            let rc = residual(&cand);
            if rc.amax() < r.amax() || alpha < 1e-3 {
                x = cand;
                break;
            }
            alpha *= 0.5;
        }
    }
    let r = residual(&x);
    if r.amax() <= tol * 100.0 {
        Ok(x)
    } else {
        Err(PlantError::SteadyState(format!(
            "reactor Newton stalled at residual {}",
            r.amax()
        )))
    }
}

/// Steady-state mass fractions [X_A, X_B, X_C, X_E, X_G, X_P] of the
/// three-reaction reality. Solved to residual <= 1e-10; a temperature
/// continuation restarts the solve from a previously converged neighbor
/// when the direct attempt stalls.
pub fn wo_reactor_steady_state(f_a: f64, f_b: f64, t_r: f64) -> Result<DVec, PlantError> {
    let solve_at = |t: f64, guess: &DVec| -> Result<DVec, PlantError> {
        let k1 = arrhenius_per_second(PLANT_A[0], PLANT_B[0], t);
        let k2 = arrhenius_per_second(PLANT_A[1], PLANT_B[1], t);
        let k3 = arrhenius_per_second(PLANT_A[2], PLANT_B[2], t);
        let f = f_a + f_b;
        let residual = move |x: &DVec| -> DVec {
            let (xa, xb, xc, xe, xg, xp) = (x[0], x[1], x[2], x[3], x[4], x[5]);
            let r1 = k1 * xa * xb * HOLDUP_KG;
            let r2 = k2 * xb * xc * HOLDUP_KG;
            let r3 = k3 * xc * xp * HOLDUP_KG;
            DVector::from_vec(vec![
                f_a - f * xa - r1,
                f_b - f * xb - r1 - r2,
                -f * xc + 2.0 * r1 - 2.0 * r2 - r3,
                -f * xe + 2.0 * r2,
                -f * xg + 1.5 * r3,
                -f * xp + r2 - 0.5 * r3,
            ])
        };
        newton_solve(residual, guess, 1e-10, 80)
    };

    let f = f_a + f_b;
    let mut guess = DVector::from_vec(vec![f_a / f, f_b / f, 0.05, 0.05, 0.02, 0.05]);
    match solve_at(t_r, &guess) {
        Ok(x) => Ok(x),
        Err(_) => {
            // Continuation from a colder, nearly reaction-free reactor.
            let mut t = 40.0;
            while t < t_r {
                guess = solve_at(t, &guess)?;
                t += 10.0;
            }
            solve_at(t_r, &guess)
        }
    }
}

/// Two-reaction model steady state: fractions [X_A, X_B, X_E, X_G, X_P].
/// `theta = [A1*, B1*, A2*, B2*]` allows sensitivity overrides.
pub fn wo_reactor_model_steady_state(
    f_a: f64,
    f_b: f64,
    t_r: f64,
    theta: &[f64],
) -> Result<DVec, PlantError> {
    let k1 = arrhenius_per_second(theta[0], theta[1], t_r);
    let k2 = arrhenius_per_second(theta[2], theta[3], t_r);
    let f = f_a + f_b;
    let residual = move |x: &DVec| -> DVec {
        let (xa, xb, xe, xg, xp) = (x[0], x[1], x[2], x[3], x[4]);
        let r1 = k1 * xa * xb * xb * HOLDUP_KG;
        let r2 = k2 * xa * xb * xp * HOLDUP_KG;
        DVector::from_vec(vec![
            f_a - f * xa - r1 - r2,
            f_b - f * xb - 2.0 * r1 - r2,
            -f * xe + 2.0 * r1,
            -f * xg + 3.0 * r2,
            -f * xp + r1 - r2,
        ])
    };
    let guess = DVector::from_vec(vec![f_a / f, f_b / f, 0.1, 0.05, 0.05]);
    newton_solve(residual, &guess, 1e-10, 80)
}

/// The reactor as a plant: inputs (F_A, F_B, T_R), measured outputs
/// (X_E, X_P, X_G). Noise-free, following the desk-scale case study.
pub struct WoReactorSim;

impl Plant for WoReactorSim {
    fn n_u(&self) -> usize {
        3
    }
    fn n_y(&self) -> usize {
        3
    }
    fn n_d_measured(&self) -> usize {
        0
    }
    fn n_d_unmeasured(&self) -> usize {
        0
    }
    fn noise_std(&self) -> DVec {
        DVector::zeros(3)
    }
    fn eval_clean(
        &self,
        u: &DVec,
        _d1: &DVec,
        _d2: &DVec,
    ) -> Result<DVec, CoreError> {
        let x = wo_reactor_steady_state(u[0], u[1], u[2]).map_err(|e| {
            CoreError::InvalidArgument(format!("reactor steady state: {e}"))
        })?;
        // Outputs X_E, X_P, X_G.
        Ok(DVector::from_vec(vec![x[3], x[5], x[4]]))
    }
}

/// Model side of the reactor problem.
pub struct WoReactorModel;

/// Negated profit (a minimization cost):
/// profit = (1143.38 X_P + 25.92 X_E) (F_A + F_B) - 76.23 F_A - 114.34 F_B.
pub fn wo_reactor_cost(u: &DVec, y: &DVec) -> f64 {
    let (fa, fb) = (u[0], u[1]);
    let (xe, xp) = (y[0], y[1]);
    -((1143.38 * xp + 25.92 * xe) * (fa + fb) - 76.23 * fa - 114.34 * fb)
}

pub fn wo_reactor_bundle(mode: WoMode) -> ExampleBundle {
    let n_g = match mode {
        WoMode::Mode1 => 1,
        WoMode::Mode2 => 0,
    };
    let theta = DVector::from_vec(vec![MODEL_A[0], MODEL_B[0], MODEL_A[1], MODEL_B[1]]);
    let spec = ProblemSpec::new(
        Arc::new(|u: &DVec, t: &DVec| {
            let x = wo_reactor_model_steady_state(u[0], u[1], u[2], t.as_slice())
                .expect("model steady state");
            // Outputs X_E, X_P, X_G.
            DVector::from_vec(vec![x[2], x[4], x[3]])
        }),
        theta,
        Arc::new(wo_reactor_cost),
        Arc::new(move |_u: &DVec, y: &DVec| {
            if n_g == 1 {
                DVector::from_vec(vec![y[2] - 0.08])
            } else {
                DVector::zeros(0)
            }
        }),
        Bounds::new(vec![3.0, 6.0, 80.0], vec![4.5, 11.0, 105.0]).unwrap(),
        3,
        3,
        n_g,
        0,
    )
    .expect("reactor spec");
    ExampleBundle {
        name: match mode {
            WoMode::Mode1 => "wo-reactor-mode1".into(),
            WoMode::Mode2 => "wo-reactor-mode2".into(),
        },
        plant: Arc::new(WoReactorSim),
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
    fn cold_reactor_barely_reacts() {
        // Vanishing rate constants: X_A -> F_A / F, products ~ 0.
        let x = wo_reactor_steady_state(3.5, 9.0, -150.0).unwrap();
        let f = 3.5 + 9.0;
        assert!((x[0] - 3.5 / f).abs() < 1e-6);
        assert!(x[5].abs() < 1e-8, "no product at cold temperatures");
    }

    #[test]
    fn mass_is_conserved_at_random_inputs() {
        let mut seed = 123456789u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let fa = 3.0 + 1.5 * next();
            let fb = 6.0 + 5.0 * next();
            let tr = 80.0 + 25.0 * next();
            let x = wo_reactor_steady_state(fa, fb, tr).unwrap();
            let sum: f64 = x.iter().sum();
            assert!(
                (sum - 1.0).abs() < 1e-8,
                "fractions sum to {sum} at ({fa}, {fb}, {tr})"
            );
            assert!(x.iter().all(|v| *v >= -1e-9 && *v <= 1.0 + 1e-9));
        }
    }

    #[test]
    fn model_steady_state_is_consistent() {
        let x = wo_reactor_model_steady_state(
            3.9,
            9.4,
            91.0,
            &[MODEL_A[0], MODEL_B[0], MODEL_A[1], MODEL_B[1]],
        )
        .unwrap();
        let sum: f64 = x.iter().sum();
        assert!((sum - 1.0).abs() < 1e-8);
    }

    #[test]
    fn hot_reactor_makes_more_g() {
        let cold = wo_reactor_steady_state(3.9, 9.4, 85.0).unwrap();
        let hot = wo_reactor_steady_state(3.9, 9.4, 104.0).unwrap();
        assert!(hot[4] > cold[4], "G fraction should grow with temperature");
    }
}
