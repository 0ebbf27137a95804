use nalgebra::{DMatrix, DVector};
use rto_core::{DMat, DVec};

use crate::error::SolverError;
use crate::nlp::NlpSolution;

pub const FEAS_TOL: f64 = 1e-8;
pub const KKT_TOL: f64 = 1e-9;
pub const ACTIVE_SET_CYCLE_CAP: usize = 100;
/// Bisection resolution of the step-2 segment search on the constraint sign.
const SEGMENT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Equality,
    Inequality,
}

/// `min q0 + q'u + 1/2 u'Qu  s.t.  h + Hu (<=|=) 0` row-wise.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub q0: f64,
    pub q: DVec,
    pub qmat: DMat,
    pub h: DVec,
    pub hmat: DMat,
    pub kinds: Vec<ConstraintKind>,
}

impl QpProblem {
    pub fn new(
        q0: f64,
        q: DVec,
        qmat: DMat,
        h: DVec,
        hmat: DMat,
        kinds: Vec<ConstraintKind>,
    ) -> Result<Self, SolverError> {
        let n = q.len();
        if qmat.nrows() != n || qmat.ncols() != n {
            return Err(SolverError::Dimension(format!(
                "Q is {}x{} but q has length {n}",
                qmat.nrows(),
                qmat.ncols()
            )));
        }
        if (&qmat - qmat.transpose()).amax() > 1e-12 {
            return Err(SolverError::Dimension("Q must be symmetric within 1e-12".into()));
        }
        let n_c = h.len();
        if hmat.nrows() != n_c || (n_c > 0 && hmat.ncols() != n) || kinds.len() != n_c {
            return Err(SolverError::Dimension(
                "constraint matrix/offset/kind sizes inconsistent".into(),
            ));
        }
        Ok(QpProblem {
            q0,
            q,
            qmat,
            h,
            hmat,
            kinds,
        })
    }

    pub fn unconstrained(q0: f64, q: DVec, qmat: DMat) -> Result<Self, SolverError> {
        let n = q.len();
        Self::new(q0, q, qmat, DVector::zeros(0), DMatrix::zeros(0, n), vec![])
    }

    pub fn n_u(&self) -> usize {
        self.q.len()
    }

    pub fn n_c(&self) -> usize {
        self.h.len()
    }

    pub fn objective(&self, u: &DVec) -> f64 {
        self.q0 + self.q.dot(u) + 0.5 * (u.transpose() * &self.qmat * u)[(0, 0)]
    }

    /// Row values `h + Hu`.
    pub fn constraint_values(&self, u: &DVec) -> DVec {
        if self.n_c() == 0 {
            DVector::zeros(0)
        } else {
            &self.h + &self.hmat * u
        }
    }

    fn is_feasible(&self, u: &DVec, tol: f64) -> bool {
        let vals = self.constraint_values(u);
        self.kinds.iter().enumerate().all(|(i, k)| match k {
            ConstraintKind::Equality => vals[i].abs() <= tol,
            ConstraintKind::Inequality => vals[i] <= tol,
        })
    }
}

/// Solve the saddle system `[[Q, H'],[H, 0]] [u; lam] = -[q; h]` for the
/// given active rows. LU first, SVD least-squares as fallback.
fn solve_kkt(
    qmat: &DMat,
    q: &DVec,
    hmat_a: &DMat,
    h_a: &DVec,
) -> Result<(DVec, DVec), SolverError> {
    let n = q.len();
    let m = h_a.len();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(qmat);
    if m > 0 {
        kkt.view_mut((0, n), (n, m)).copy_from(&hmat_a.transpose());
        kkt.view_mut((n, 0), (m, n)).copy_from(hmat_a);
    }
    let mut rhs = DVector::zeros(n + m);
    for i in 0..n {
        rhs[i] = -q[i];
    }
    for i in 0..m {
        rhs[n + i] = -h_a[i];
    }
    let lu = kkt.clone().lu();
    let sol = match lu.solve(&rhs) {
        Some(s) if s.iter().all(|v| v.is_finite()) => {
            // Reject spurious LU "solutions" of singular systems.
            if (&kkt * &s - &rhs).amax() <= 1e-8 * (1.0 + rhs.amax()) {
                s
            } else {
                let svd = kkt.clone().svd(true, true);
                svd.solve(&rhs, 1e-12)
                    .map_err(|e| SolverError::RankDeficient(e.to_string()))?
            }
        }
        _ => {
            let svd = kkt.clone().svd(true, true);
            let s = svd
                .solve(&rhs, 1e-12)
                .map_err(|e| SolverError::RankDeficient(e.to_string()))?;
            if (&kkt * &s - &rhs).amax() > 1e-6 * (1.0 + rhs.amax()) {
                return Err(SolverError::RankDeficient(
                    "KKT system has no solution".into(),
                ));
            }
            s
        }
    };
    Ok((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
}

/// Analytic solution of an equality-constrained QP. All rows are treated as
/// equalities regardless of kind.
pub fn solve_equality_qp(p: &QpProblem) -> Result<NlpSolution, SolverError> {
    let (u, lam) = solve_kkt(&p.qmat, &p.q, &p.hmat, &p.h)?;
    let active: Vec<usize> = (0..p.n_c()).collect();
    let mut multipliers = DVector::zeros(p.n_c());
    for (i, a) in active.iter().enumerate() {
        multipliers[*a] = lam[i];
    }
    let objective = p.objective(&u);
    Ok(NlpSolution {
        u_star: u,
        multipliers,
        active_set: active,
        converged: true,
        iterations: 1,
        objective,
        kkt_residual: 0.0,
    })
}

/// Largest point along `[from, to]` keeping all rows feasible, found by
/// bisection on the worst constraint sign (resolution 1e-10 in t).
fn segment_search(p: &QpProblem, from: &DVec, to: &DVec) -> DVec {
    let worst = |t: f64| -> f64 {
        let u = from + (to - from) * t;
        let vals = p.constraint_values(&u);
        let mut w = f64::NEG_INFINITY;
        for (i, k) in p.kinds.iter().enumerate() {
            if *k == ConstraintKind::Inequality {
                w = w.max(vals[i]);
            }
        }
        w
    };
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    if worst(1.0) <= FEAS_TOL {
        return to.clone();
    }
    while hi - lo > SEGMENT_TOL {
        let mid = 0.5 * (lo + hi);
        if worst(mid) <= FEAS_TOL {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    from + (to - from) * lo
}

fn active_rows(p: &QpProblem, u: &DVec, tol: f64) -> Vec<usize> {
    let vals = p.constraint_values(u);
    (0..p.n_c())
        .filter(|&i| match p.kinds[i] {
            ConstraintKind::Equality => true,
            ConstraintKind::Inequality => vals[i] >= -tol,
        })
        .collect()
}

fn rows_of(p: &QpProblem, idx: &[usize]) -> (DMat, DVec) {
    let n = p.n_u();
    let mut hm = DMatrix::zeros(idx.len(), n);
    let mut hv = DVector::zeros(idx.len());
    for (r, &i) in idx.iter().enumerate() {
        hm.row_mut(r).copy_from(&p.hmat.row(i));
        hv[r] = p.h[i];
    }
    (hm, hv)
}

/// Crude feasibility restoration: repeated projection onto the most
/// violated half-space. Adequate for the desk-scale convex rows used here.
fn restore_feasibility(p: &QpProblem, u0: &DVec) -> DVec {
    let mut u = u0.clone();
    for _ in 0..500 {
        let vals = p.constraint_values(&u);
        let mut worst = FEAS_TOL;
        let mut worst_i = None;
        for (i, k) in p.kinds.iter().enumerate() {
            let v = match k {
                ConstraintKind::Equality => vals[i].abs(),
                ConstraintKind::Inequality => vals[i],
            };
            if v > worst {
                worst = v;
                worst_i = Some(i);
            }
        }
        let Some(i) = worst_i else { return u };
        let row = p.hmat.row(i).transpose();
        let nrm2 = row.norm_squared();
        if nrm2 < 1e-300 {
            return u;
        }
        u -= row * (vals[i] / nrm2);
    }
    u
}

/// Active-set procedure: step 0 initialization, step 1 equality solve,
/// step 2 feasibility test with segment search, step 3 multiplier test,
/// step 4 finalization.
pub fn solve_inequality_qp(p: &QpProblem, u0: &DVec) -> Result<NlpSolution, SolverError> {
    if u0.len() != p.n_u() {
        return Err(SolverError::Dimension("u0 length != n_u".into()));
    }
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::Dimension("u0 must be finite".into()));
    }
    // Step 0: feasible start and its active set.
    let mut u_test = if p.is_feasible(u0, FEAS_TOL) {
        u0.clone()
    } else {
        restore_feasibility(p, u0)
    };
    if !p.is_feasible(&u_test, 1e-6) {
        return Err(SolverError::Infeasible(
            "could not restore a feasible starting point".into(),
        ));
    }
    let mut active = active_rows(p, &u_test, 1e-9);

    for cycle in 0..ACTIVE_SET_CYCLE_CAP {
        // Step 1: equality solve on the trial active set.
        let (hm, hv) = rows_of(p, &active);
        let (u_next, lam) = match solve_kkt(&p.qmat, &p.q, &hm, &hv) {
            Ok(r) => r,
            Err(_) => {
                // Redundant active rows: retry with an independent subset.
                let indep = independent_subset(&hm, &active);
                let (hm2, hv2) = rows_of(p, &indep);
                active = indep;
                solve_kkt(&p.qmat, &p.q, &hm2, &hv2)?
            }
        };

        // Step 2: test all rows at the candidate.
        if !p.is_feasible(&u_next, FEAS_TOL) {
            let u_seg = segment_search(p, &u_test, &u_next);
            active = active_rows(p, &u_seg, 1e-7);
            u_test = u_seg;
            continue;
        }

        // Step 3: multiplier sign test on inequality rows.
        let mut drop_idx: Option<usize> = None;
        let mut most_negative = -KKT_TOL;
        for (r, &i) in active.iter().enumerate() {
            if p.kinds[i] == ConstraintKind::Inequality && lam[r] < most_negative {
                most_negative = lam[r];
                drop_idx = Some(r);
            }
        }
        if let Some(r) = drop_idx {
            active.remove(r);
            u_test = u_next;
            continue;
        }

        // Step 4: both tests passed.
        let mut multipliers = DVector::zeros(p.n_c());
        for (r, &i) in active.iter().enumerate() {
            multipliers[i] = lam[r].max(0.0);
        }
        let mut sol = NlpSolution {
            objective: p.objective(&u_next),
            u_star: u_next,
            multipliers,
            active_set: active,
            converged: true,
            iterations: cycle + 1,
            kkt_residual: 0.0,
        };
        sol.kkt_residual = qp_kkt_residual(p, &sol);
        return Ok(sol);
    }

    let mut multipliers = DVector::zeros(p.n_c());
    for &i in &active {
        multipliers[i] = 0.0;
    }
    let last = NlpSolution {
        objective: p.objective(&u_test),
        u_star: u_test,
        multipliers,
        active_set: active,
        converged: false,
        iterations: ACTIVE_SET_CYCLE_CAP,
        kkt_residual: f64::INFINITY,
    };
    Err(SolverError::NonConvergence {
        cycles: ACTIVE_SET_CYCLE_CAP,
        last: Box::new(last),
    })
}

fn independent_subset(hm: &DMat, active: &[usize]) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    let mut rows: Vec<DVec> = Vec::new();
    for (r, &i) in active.iter().enumerate() {
        let cand = hm.row(r).transpose();
        let mut resid = cand.clone();
        for b in &rows {
            let proj = resid.dot(b);
            resid -= b * proj;
        }
        if resid.norm() > 1e-10 * (1.0 + cand.norm()) {
            rows.push(resid.normalize());
            kept.push(i);
        }
    }
    kept
}

/// KKT residual of a QP solution: stationarity, primal feasibility,
/// dual feasibility and complementarity (max norm).
pub fn qp_kkt_residual(p: &QpProblem, sol: &NlpSolution) -> f64 {
    let grad = &p.q + &p.qmat * &sol.u_star;
    let mut stat = grad.clone();
    for i in 0..p.n_c() {
        let row = p.hmat.row(i).transpose();
        stat += row * sol.multipliers[i];
    }
    let vals = p.constraint_values(&sol.u_star);
    let mut res: f64 = stat.amax();
    for (i, k) in p.kinds.iter().enumerate() {
        match k {
            ConstraintKind::Equality => res = res.max(vals[i].abs()),
            ConstraintKind::Inequality => {
                res = res.max(vals[i].max(0.0));
                res = res.max((-sol.multipliers[i]).max(0.0));
                res = res.max((sol.multipliers[i] * vals[i]).abs());
            }
        }
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unconstrained_identity() {
        // Q=I2, q=(-1,-1) -> u* = (1,1)
        let p = QpProblem::unconstrained(
            0.0,
            DVector::from_vec(vec![-1.0, -1.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let sol = solve_equality_qp(&p).unwrap();
        assert_relative_eq!(sol.u_star[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(sol.u_star[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_equality() {
        // Q=I2, q=0, u1+u2=1 -> (0.5, 0.5)
        let p = QpProblem::new(
            0.0,
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![-1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            vec![ConstraintKind::Equality],
        )
        .unwrap();
        let sol = solve_equality_qp(&p).unwrap();
        assert_relative_eq!(sol.u_star[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(sol.u_star[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn clipped_scalar_minimum() {
        // min -2u + u^2/2... here: Q=[1], q=[-2], u <= 0.5 -> u*=0.5, lam=1.5
        let p = QpProblem::new(
            0.0,
            DVector::from_vec(vec![-2.0]),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_vec(vec![-0.5]),
            DMatrix::from_element(1, 1, 1.0),
            vec![ConstraintKind::Inequality],
        )
        .unwrap();
        let sol = solve_inequality_qp(&p, &DVector::zeros(1)).unwrap();
        assert_relative_eq!(sol.u_star[0], 0.5, epsilon = 1e-9);
        assert_relative_eq!(sol.multipliers[0], 1.5, epsilon = 1e-9);
        assert!(sol.kkt_residual <= KKT_TOL);
    }

    #[test]
    fn inactive_constraints_reduce_to_unconstrained() {
        let p = QpProblem::new(
            0.0,
            DVector::from_vec(vec![-1.0, -1.0]),
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![-10.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            vec![ConstraintKind::Inequality],
        )
        .unwrap();
        let sol = solve_inequality_qp(&p, &DVector::zeros(2)).unwrap();
        let unc = solve_equality_qp(
            &QpProblem::unconstrained(0.0, p.q.clone(), p.qmat.clone()).unwrap(),
        )
        .unwrap();
        assert!((&sol.u_star - &unc.u_star).amax() < 1e-10);
        assert!(sol.active_set.is_empty());
    }

    #[test]
    fn singular_kkt_reports_rank_deficiency() {
        // Zero curvature along the unconstrained direction: no solution.
        let p = QpProblem::unconstrained(
            0.0,
            DVector::from_vec(vec![1.0]),
            DMatrix::from_element(1, 1, 0.0),
        )
        .unwrap();
        assert!(matches!(
            solve_equality_qp(&p),
            Err(SolverError::RankDeficient(_))
        ));
    }
}
