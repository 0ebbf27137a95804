//! Exploratory WO-plant autopilot runs (run with --ignored --nocapture).

use std::sync::Arc;

use nalgebra::DVector;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rto_asp::{AspConfig, AspProblem, AspStatus, Autopilot, DecisionConfig};
use rto_core::types::{Bounds, PlantInterface};
use rto_core::DVec;
use rto_gp::GpPrior;
use rto_plants::wo_plant::{wo_plant_cost, wo_plant_model_outputs, WoPlantSim, F_P_MAX};
use rto_plants::ChannelNoise;

fn wo_problem() -> AspProblem {
    let delta_y = [1.0, 1.5, 1.5, 0.02];
    let priors = (0..4)
        .map(|j| {
            GpPrior::from_error_bound(
                Arc::new(move |x: &DVec| {
                    wo_plant_model_outputs(x[0], x[1])
                        .map(|y| y[j])
                        .unwrap_or(f64::NAN)
                }),
                delta_y[j],
                DVector::from_vec(vec![4.0, 0.5]),
            )
        })
        .collect();
    AspProblem {
        plant: Arc::new(PlantInterface::new(Arc::new(WoPlantSim))),
        cost: Arc::new(wo_plant_cost),
        constraints: Arc::new(|_u: &DVec, y: &DVec| DVector::from_vec(vec![y[0] - F_P_MAX])),
        n_g: 1,
        n_y: 4,
        bounds: Bounds::new(vec![10.0], vec![20.0]).unwrap(),
        priors,
        noise_var: DVector::from_element(4, 5e-6),
    }
}

fn wo_config(validation: bool) -> AspConfig {
    AspConfig {
        decision: DecisionConfig {
            loss_acc: 0.1,
            du_scal: DVector::from_vec(vec![0.01]),
            hard: vec![true],
            zeta: DVector::from_vec(vec![0.02]),
            validity_halfwidth: DVector::from_vec(vec![0.2]),
            half_widths: DVector::from_vec(vec![4.0 / 6.0, 0.5 / 6.0]),
            gamma: 4.0,
            probe_cap: 10,
        },
        samples_per_experiment: 60,
        period_hours: 8.0,
        validation,
        nlp: rto_solver::NlpOptions::default(),
        u0: DVector::from_vec(vec![17.4]),
    }
}

#[test]
#[ignore]
fn explore_study1() {
    for validation in [true, false] {
        println!("=== validation={validation} ===");
        let mut ap = Autopilot::new(
            wo_problem(),
            wo_config(validation),
            ChaCha12Rng::seed_from_u64(11),
        )
        .unwrap();
        let mut noise = ChannelNoise::new(42, 4);
        let d = DVector::from_vec(vec![0.0]);
        let alpha = DVector::from_vec(vec![0.5499]);
        for p in 0..20 {
            let rec = ap.run_period(&d, &alpha, &[], &mut noise).unwrap();
            println!(
                "p={p} u={:.4} status={:?} decision={} probe={} loss_max={:?} pred_cost={:?} rows={} recs={} dur={:.3}s",
                rec.u_applied[0],
                rec.status,
                rec.decision,
                rec.probe,
                rec.loss_max.map(|v| (v * 1e4).round() / 1e4),
                rec.predicted_cost.map(|v| (v * 100.0).round() / 100.0),
                rec.db_rows,
                rec.db_records,
                rec.duration_s
            );
            if rec.status == AspStatus::Standby && p > 0 {
                break;
            }
        }
        println!("log: {:?}", ap.log);
        let u_final = ap.u_current[0];
        let yp = rto_plants::wo_plant_steady_state(u_final, 0.0, 0.5499).unwrap();
        let plant_cost = wo_plant_cost(&DVector::from_vec(vec![u_final]), &yp);
        println!("final u={u_final:.4} plant cost={plant_cost:.3} (oracle best ~ -380.40 at 16.60)\n");
    }
}
