//! Exploratory WO-plant Study 2 / Study 3 runs (run with --ignored).

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
                    wo_plant_model_outputs(x[0], x[1]).map(|y| y[j]).unwrap_or(f64::NAN)
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

fn wo_config(u0: f64) -> AspConfig {
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
        validation: true,
        nlp: rto_solver::NlpOptions::default(),
        u0: DVector::from_vec(vec![u0]),
    }
}

#[test]
#[ignore]
fn explore_study2() {
    // Scenario 1: large alpha step during stand-by.
    for (name, step_period, revert) in [("sc1", 8usize, None), ("sc2", 8usize, Some(0))] {
        println!("=== study2 {name} ===");
        let mut ap = Autopilot::new(wo_problem(), wo_config(17.4), ChaCha12Rng::seed_from_u64(21)).unwrap();
        let mut noise = ChannelNoise::new(77, 4);
        let d = DVector::from_vec(vec![0.0]);
        for p in 0..16 {
            // Scenario 1: alpha steps at the start of `step_period` and stays.
            // Scenario 2: steps and reverts before the period's SS sample.
            let alpha = if p >= step_period && revert.is_none() {
                0.45
            } else {
                0.5499
            };
            let rec = ap
                .run_period(&d, &DVector::from_vec(vec![alpha]), &[], &mut noise)
                .unwrap();
            println!(
                "p={p} alpha={alpha} u={:.4} status={:?} reset={} decision={} loss={:?}",
                rec.u_applied[0], rec.status, rec.reset, rec.decision,
                rec.loss_max.map(|v| (v * 1e3).round() / 1e3)
            );
        }
        println!("log: {:?}\n", ap.log);
    }
}

#[test]
#[ignore]
fn explore_study3() {
    println!("=== study3 (30 days, d' steps every ~5 days) ===");
    let mut ap = Autopilot::new(wo_problem(), wo_config(12.0), ChaCha12Rng::seed_from_u64(31)).unwrap();
    let mut noise = ChannelNoise::new(99, 4);
    let alpha = DVector::from_vec(vec![0.5499]);
    let d_script = [0.0, 0.3, -0.25, 0.55, 0.1, -0.4];
    let mut max_rows = 0;
    for p in 0..90 {
        let d = DVector::from_vec(vec![d_script[(p / 15) as usize]]);
        let rec = ap.run_period(&d, &alpha, &[], &mut noise).unwrap();
        max_rows = max_rows.max(rec.db_rows);
        if p % 5 == 0 || rec.reset || rec.decision {
            println!(
                "p={p} d={:.2} u={:.3} status={:?} reset={} dec={} rows={} recs={} dur={:.2}s",
                d[0], rec.u_applied[0], rec.status, rec.reset, rec.decision,
                rec.db_rows, rec.db_records, rec.duration_s
            );
        }
    }
    println!("log: {:?} max_rows={max_rows}", ap.log);
    let n = ap.history.len();
    let mid: Vec<f64> = ap.history[n / 3..2 * n / 3].iter().map(|r| r.duration_s).collect();
    let late: Vec<f64> = ap.history[2 * n / 3..].iter().map(|r| r.duration_s).collect();
    let med = |mut v: Vec<f64>| { v.sort_by(|a, b| a.partial_cmp(b).unwrap()); v[v.len() / 2] };
    println!("median period time mid={:.3}s late={:.3}s", med(mid), med(late));
}
