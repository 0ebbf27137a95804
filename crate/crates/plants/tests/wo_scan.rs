//! Exploratory scans of the Williams-Otto landscapes (run with --ignored).

use nalgebra::DVector;
use rto_plants::{wo_plant_steady_state, wo_reactor_steady_state};

#[test]
#[ignore]
fn scan_wo_plant_cost() {
    for d in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=100 {
            let u = 10.0 + 10.0 * i as f64 / 100.0;
            let y = wo_plant_steady_state(u, d, 0.5499).unwrap();
            let cost = 1000.0 * (0.02 * y[3] + 0.03 * u + 0.01 * y[1] - 0.3 * y[0] - 0.0068 * y[2])
                / 0.45;
            if cost < best.0 {
                best = (cost, u, y[0]);
            }
            if i % 10 == 0 {
                println!("d'={d:+.1} u={u:5.2} F_P={:.4} F_G={:.4} F_D={:.4} cost={cost:9.3}", y[0], y[1], y[2]);
            }
        }
        println!("d'={d:+.1}: best cost {:.3} at u={:.2} with F_P={:.4}\n", best.0, best.1, best.2);
    }
}

#[test]
#[ignore]
fn scan_wo_reactor_cost() {
    for mode1 in [true, false] {
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0, 0.0, 0.0);
        for a in 0..=15 {
            for b in 0..=25 {
                for t in 0..=25 {
                    let fa = 3.0 + 1.5 * a as f64 / 15.0;
                    let fb = 6.0 + 5.0 * b as f64 / 25.0;
                    let tr = 80.0 + 25.0 * t as f64 / 25.0;
                    let x = wo_reactor_steady_state(fa, fb, tr).unwrap();
                    if mode1 && x[4] > 0.08 {
                        continue;
                    }
                    let profit =
                        (1143.38 * x[5] + 25.92 * x[3]) * (fa + fb) - 76.23 * fa - 114.34 * fb;
                    if profit > best.0 {
                        best = (profit, fa, fb, tr, x[4]);
                    }
                }
            }
        }
        println!(
            "mode1={mode1}: best profit {:.2} at (F_A={:.2}, F_B={:.2}, T_R={:.1}), X_G={:.4}",
            best.0, best.1, best.2, best.3, best.4
        );
    }
    let _ = DVector::<f64>::zeros(1);
}

#[test]
#[ignore]
fn scan_wo_model_mismatch() {
    use rto_plants::wo_plant::wo_plant_model_outputs;
    let mut worst = [0.0_f64; 4];
    let mut best_model = (f64::INFINITY, 0.0);
    for i in 0..=60 {
        let u = 10.0 + 10.0 * i as f64 / 60.0;
        for j in 0..=4 {
            let d = -1.0 + 2.0 * j as f64 / 4.0;
            let yp = wo_plant_steady_state(u, d, 0.5499).unwrap();
            let ym = wo_plant_model_outputs(u, d).unwrap();
            for c in 0..4 {
                worst[c] = worst[c].max((yp[c] - ym[c]).abs());
            }
        }
        let ym = wo_plant_model_outputs(u, 0.0).unwrap();
        let cost =
            1000.0 * (0.02 * ym[3] + 0.03 * u + 0.01 * ym[1] - 0.3 * ym[0] - 0.0068 * ym[2]) / 0.45;
        if cost < best_model.0 {
            best_model = (cost, u);
        }
    }
    println!("max |f_p - f| per output: {worst:?}");
    println!("model optimum at d'=0: u={:.3} cost={:.3}", best_model.1, best_model.0);
    let yp = wo_plant_steady_state(best_model.1, 0.0, 0.5499).unwrap();
    let plant_cost_at_model_opt =
        1000.0 * (0.02 * yp[3] + 0.03 * best_model.1 + 0.01 * yp[1] - 0.3 * yp[0] - 0.0068 * yp[2])
            / 0.45;
    println!("plant cost at model optimum: {plant_cost_at_model_opt:.3} (plant best was -380.403 at 16.60)");
}
