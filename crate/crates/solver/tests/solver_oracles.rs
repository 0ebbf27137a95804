//! Oracle-backed checks: the active-set and SQP paths are compared against
//! independent brute-force solvers (dense least-squares KKT solve, zoomed
//! grid search with projected-gradient refinement).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rto_core::DVec;
use rto_solver::{
    evaluate_sol_map, solve_equality_qp, solve_inequality_qp, ConstraintKind, NlpFunctions,
    NlpOptions, QpProblem,
};

fn random_spd(rng: &mut ChaCha12Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * floor
}

/// Independent oracle for the equality QP: assemble the saddle system and
/// solve it by SVD least squares only.
fn kkt_least_squares(p: &QpProblem) -> DVec {
    let n = p.n_u();
    let m = p.n_c();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(&p.qmat);
    kkt.view_mut((0, n), (n, m)).copy_from(&p.hmat.transpose());
    kkt.view_mut((n, 0), (m, n)).copy_from(&p.hmat);
    let mut rhs = DVector::zeros(n + m);
    for i in 0..n {
        rhs[i] = -p.q[i];
    }
    for i in 0..m {
        rhs[n + i] = -p.h[i];
    }
    let sol = kkt.svd(true, true).solve(&rhs, 1e-14).unwrap();
    sol.rows(0, n).into_owned()
}

#[test]
fn equality_qp_matches_least_squares_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    for _ in 0..10 {
        let qmat = random_spd(&mut rng, 4, 0.5);
        let q = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
        let hmat = DMatrix::from_fn(2, 4, |_, _| rng.gen_range(-1.0..1.0));
        let h = DVector::from_fn(2, |_, _| rng.gen_range(-0.5..0.5));
        let p = QpProblem::new(
            0.0,
            q,
            qmat,
            h,
            hmat,
            vec![ConstraintKind::Equality; 2],
        )
        .unwrap();
        let sol = solve_equality_qp(&p).unwrap();
        let oracle = kkt_least_squares(&p);
        assert!(
            (&sol.u_star - &oracle).amax() < 1e-10,
            "equality QP drifted from the least-squares oracle"
        );
    }
}

/// Zoomed grid search (final step <= 1e-3) over the feasible points,
/// followed by projected-gradient refinement (projection by cyclic
/// half-space corrections).
fn grid_polish_oracle(p: &QpProblem, box_half: f64) -> f64 {
    let n = p.n_u();
    assert_eq!(n, 3, "oracle written for n = 3");
    let feasible = |u: &DVec| -> bool {
        let v = p.constraint_values(u);
        (0..p.n_c()).all(|i| v[i] <= 1e-9)
    };

    // Grid zoom.
    let mut center = DVector::zeros(n);
    let mut half = box_half;
    let mut best = (f64::INFINITY, center.clone());
    while half > 5e-4 {
        let pts = 21;
        for a in 0..pts {
            for b in 0..pts {
                for c in 0..pts {
                    let u = DVector::from_vec(vec![
                        center[0] - half + 2.0 * half * a as f64 / (pts - 1) as f64,
                        center[1] - half + 2.0 * half * b as f64 / (pts - 1) as f64,
                        center[2] - half + 2.0 * half * c as f64 / (pts - 1) as f64,
                    ]);
                    if feasible(&u) {
                        let obj = p.objective(&u);
                        if obj < best.0 {
                            best = (obj, u);
                        }
                    }
                }
            }
        }
        center = best.1.clone();
        half /= 5.0;
    }

    // Projected-gradient refinement.
    let lmax = p
        .qmat
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0_f64, |a, b| a.max(*b));
    let step = 1.0 / lmax.max(1.0);
    let project = |mut u: DVec| -> DVec {
        for _ in 0..200 {
            let v = p.constraint_values(&u);
            let mut worst = 1e-12;
            let mut worst_i = None;
            for i in 0..p.n_c() {
                if v[i] > worst {
                    worst = v[i];
                    worst_i = Some(i);
                }
            }
            let Some(i) = worst_i else { break };
            let row = p.hmat.row(i).transpose();
            u -= &row * (v[i] / row.norm_squared());
        }
        u
    };
    let mut u = best.1.clone();
    for _ in 0..5000 {
        let grad = &p.q + &p.qmat * &u;
        u = project(&u - grad * step);
    }
    p.objective(&u).min(best.0)
}

#[test]
fn random_convex_qps_match_grid_polish_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(13);
    for trial in 0..20 {
        let qmat = random_spd(&mut rng, 3, 0.5);
        let q = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        // Four half-spaces keeping the origin strictly feasible.
        let hmat = DMatrix::from_fn(4, 3, |_, _| rng.gen_range(-1.0..1.0));
        let h = DVector::from_fn(4, |_, _| -rng.gen_range(0.1..1.0));
        let p = QpProblem::new(
            0.0,
            q,
            qmat,
            h,
            hmat,
            vec![ConstraintKind::Inequality; 4],
        )
        .unwrap();
        let sol = solve_inequality_qp(&p, &DVector::zeros(3)).unwrap();
        let oracle_obj = grid_polish_oracle(&p, 5.0);
        assert!(
            (sol.objective - oracle_obj).abs() < 1e-6,
            "trial {trial}: active-set objective {} vs oracle {}",
            sol.objective,
            oracle_obj
        );
        // Re-solve check: the inequality solution equals the equality QP
        // restricted to the returned active set.
        let m = sol.active_set.len();
        let mut hm = DMatrix::zeros(m, 3);
        let mut hv = DVector::zeros(m);
        for (r, &i) in sol.active_set.iter().enumerate() {
            hm.row_mut(r).copy_from(&p.hmat.row(i));
            hv[r] = p.h[i];
        }
        let eq = QpProblem::new(0.0, p.q.clone(), p.qmat.clone(), hv, hm, vec![
            ConstraintKind::Equality;
            m
        ])
        .unwrap();
        let eq_sol = solve_equality_qp(&eq).unwrap();
        assert!(
            (&eq_sol.u_star - &sol.u_star).amax() < 1e-10,
            "trial {trial}: active-set restriction mismatch"
        );
        assert!(sol.kkt_residual <= 1e-9);
    }
}

/// The scalar quarter-square model family corrected at `v` against the
/// shifted-parabola reality: the anchored-model optimizer map has the
/// closed forms sol(v) = -3v + 4, with sol(1) = 1 and slope -3.
fn anchored_family(v: &DVec) -> NlpFunctions<'static> {
    let vk = v[0];
    let plant_grad = 2.0 * (vk - 1.0);
    let model_grad = vk / 2.0;
    let lin = plant_grad - model_grad;
    NlpFunctions::from_closures(
        move |u: &DVec| u[0] * u[0] / 4.0 + lin * (u[0] - vk),
        |u: &DVec| DVector::from_vec(vec![u[0] - 5.0, -5.0 - u[0]]),
        2,
    )
}

#[test]
fn sol_map_fixed_point_and_slope() {
    let grid: Vec<DVec> = vec![
        DVector::from_vec(vec![1.0 - 1e-3]),
        DVector::from_vec(vec![1.0]),
        DVector::from_vec(vec![1.0 + 1e-3]),
    ];
    let rows = evaluate_sol_map(anchored_family, &grid, &NlpOptions::default());
    let sols: Vec<f64> = rows
        .iter()
        .map(|r| r.solution.as_ref().unwrap().u_star[0])
        .collect();
    assert!((sols[1] - 1.0).abs() < 1e-6, "sol(1) should be 1");
    let slope = (sols[2] - sols[0]) / 2e-3;
    assert!((slope + 3.0).abs() < 1e-3, "slope {slope} should be -3");
}

#[test]
fn sol_map_is_continuous_between_active_set_changes() {
    let grid: Vec<DVec> = (0..2001)
        .map(|i| DVector::from_vec(vec![0.0 + 2.0 * i as f64 / 2000.0]))
        .collect();
    let rows = evaluate_sol_map(anchored_family, &grid, &NlpOptions::default());
    let mut max_jump = 0.0_f64;
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let (sa, sb) = (a.solution.as_ref().unwrap(), b.solution.as_ref().unwrap());
        if sa.active_set == sb.active_set {
            max_jump = max_jump.max((sa.u_star[0] - sb.u_star[0]).abs());
        }
    }
    assert!(max_jump <= 1e-2, "max sol jump {max_jump} exceeds 1e-2");
}

/// Tightened lower bound u >= 1: the multiplier branch where that bound is
/// active must carry a positive multiplier, and the branch boundary must
/// match a brute-force per-v active-set enumeration.
#[test]
fn sol_map_multiplier_branch_matches_enumeration() {
    let family = |v: &DVec| {
        let vk = v[0];
        let plant_grad = 2.0 * (vk - 1.0);
        let model_grad = vk / 2.0;
        let lin = plant_grad - model_grad;
        NlpFunctions::from_closures(
            move |u: &DVec| u[0] * u[0] / 4.0 + lin * (u[0] - vk),
            |u: &DVec| DVector::from_vec(vec![1.0 - u[0], u[0] - 5.0]),
            2,
        )
    };
    // Brute force: the unconstrained optimizer is -3v + 4; the bound u >= 1
    // is active exactly when -3v + 4 < 1, i.e. v > 1.
    let grid: Vec<DVec> = (0..101)
        .map(|i| DVector::from_vec(vec![0.5 + 1.0 * i as f64 / 100.0]))
        .collect();
    let rows = evaluate_sol_map(family, &grid, &NlpOptions::default());
    for r in &rows {
        let v = r.v[0];
        let sol = r.solution.as_ref().unwrap();
        let expect_active = -3.0 * v + 4.0 < 1.0 - 1e-6;
        let is_active = sol.active_set.contains(&0);
        if (-3.0 * v + 4.0 - 1.0).abs() > 1e-3 {
            assert_eq!(
                is_active, expect_active,
                "active-set branch mismatch at v = {v}"
            );
        }
        if expect_active {
            assert!(
                sol.multipliers[0] > 0.0,
                "lower-bound multiplier should be positive at v = {v}"
            );
        }
    }
}
