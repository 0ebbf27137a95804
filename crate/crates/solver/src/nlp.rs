use nalgebra::{DMatrix, DVector};
use rto_core::{
    default_fd_step, finite_diff_gradient, finite_diff_hessian, finite_diff_jacobian, psd_clamp,
    types::Bounds, DMat, DVec,
};

use crate::error::SolverError;
use crate::qp::{self, solve_inequality_qp, ConstraintKind, QpProblem};

/// Solution of a (possibly nonlinear) program: optimizer, inequality
/// multipliers, active set and convergence data.
#[derive(Debug, Clone)]
pub struct NlpSolution {
    pub u_star: DVec,
    /// One multiplier per constraint row, zero for inactive rows.
    pub multipliers: DVec,
    pub active_set: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub kkt_residual: f64,
}

/// Problem functions with optional analytic derivatives; finite differences
/// are used where derivatives are absent.
pub struct NlpFunctions<'a> {
    pub cost: Box<dyn Fn(&DVec) -> f64 + 'a>,
    pub cost_grad: Option<Box<dyn Fn(&DVec) -> DVec + 'a>>,
    pub constraints: Box<dyn Fn(&DVec) -> DVec + 'a>,
    pub constraints_jac: Option<Box<dyn Fn(&DVec) -> DMat + 'a>>,
    pub n_g: usize,
}

impl<'a> NlpFunctions<'a> {
    pub fn from_closures<F, G>(cost: F, constraints: G, n_g: usize) -> Self
    where
        F: Fn(&DVec) -> f64 + 'a,
        G: Fn(&DVec) -> DVec + 'a,
    {
        NlpFunctions {
            cost: Box::new(cost),
            cost_grad: None,
            constraints: Box::new(constraints),
            constraints_jac: None,
            n_g,
        }
    }

    pub fn unconstrained<F>(cost: F) -> Self
    where
        F: Fn(&DVec) -> f64 + 'a,
    {
        NlpFunctions {
            cost: Box::new(cost),
            cost_grad: None,
            constraints: Box::new(|_u| DVector::zeros(0)),
            constraints_jac: None,
            n_g: 0,
        }
    }

    fn grad(&self, u: &DVec) -> Result<DVec, SolverError> {
        if let Some(g) = &self.cost_grad {
            Ok(g(u))
        } else {
            Ok(finite_diff_gradient(&self.cost, u, &default_fd_step(u))?)
        }
    }

    fn jac(&self, u: &DVec) -> Result<DMat, SolverError> {
        if self.n_g == 0 {
            return Ok(DMatrix::zeros(0, u.len()));
        }
        if let Some(j) = &self.constraints_jac {
            Ok(j(u))
        } else {
            Ok(finite_diff_jacobian(
                &self.constraints,
                u,
                &default_fd_step(u),
                self.n_g,
            )?)
        }
    }
}

#[derive(Debug, Clone)]
pub struct NlpOptions {
    pub kkt_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
    /// Extra starting points besides the default spread around u0.
    pub extra_starts: Vec<DVec>,
    /// Box used to size the default multi-start spread (and clamp starts).
    pub bounds: Option<Bounds>,
    /// Disable the default +-0.1*width spread (single-start).
    pub single_start: bool,
}

impl Default for NlpOptions {
    fn default() -> Self {
        NlpOptions {
            kkt_tol: qp::KKT_TOL,
            feas_tol: qp::FEAS_TOL,
            max_iter: 60,
            extra_starts: vec![],
            bounds: None,
            single_start: false,
        }
    }
}

fn kkt_residual(
    funcs: &NlpFunctions,
    u: &DVec,
    lam: &DVec,
    feasibility_weight: bool,
) -> Result<f64, SolverError> {
    let grad = funcs.grad(u)?;
    let jac = funcs.jac(u)?;
    let g = (funcs.constraints)(u);
    let mut stat = grad;
    for i in 0..funcs.n_g {
        stat += jac.row(i).transpose() * lam[i];
    }
    let mut res: f64 = stat.amax();
    for i in 0..funcs.n_g {
        if feasibility_weight {
            res = res.max(g[i].max(0.0));
        }
        res = res.max((-lam[i]).max(0.0));
        res = res.max((lam[i] * g[i]).abs());
    }
    Ok(res)
}

/// One SQP run from a single start.
fn sqp_single(
    funcs: &NlpFunctions,
    u0: &DVec,
    opts: &NlpOptions,
) -> Result<NlpSolution, SolverError> {
    let n = u0.len();
    let mut u = u0.clone();
    let mut lam = DVector::zeros(funcs.n_g);
    let mut best_res = f64::INFINITY;
    let mut iterations = 0;

    for it in 0..opts.max_iter {
        iterations = it + 1;
        let grad = funcs.grad(&u)?;
        let hess = finite_diff_hessian(&funcs.cost, &u, &default_fd_step(&u))?;
        // Convexified subproblem Hessian: the clamp changes the path, not
        // the KKT points.
        let scale = hess.amax().max(1.0);
        let b = psd_clamp(&hess, 1e-8 * scale);
        let g = (funcs.constraints)(&u);
        let jac = funcs.jac(&u)?;

        // QP in step coordinates d = u' - u: min grad'd + 1/2 d'Bd
        // s.t. g + J d <= 0.
        let qp_problem = QpProblem::new(
            0.0,
            grad.clone(),
            b,
            g.clone(),
            jac.clone(),
            vec![ConstraintKind::Inequality; funcs.n_g],
        )?;
        let sub = match solve_inequality_qp(&qp_problem, &DVector::zeros(n)) {
            Ok(s) => s,
            Err(SolverError::Infeasible(_)) => {
                // Elastic fallback: pull toward feasibility of the
                // linearized rows.
                elastic_step(&qp_problem)?
            }
            Err(e) => return Err(e),
        };
        let d = sub.u_star.clone();
        lam = sub.multipliers.clone();

        // Step C: backtracking on an l1 merit with penalty 10*|lam|_inf.
        let rho = 10.0 * lam.amax().max(0.1);
        let merit = |x: &DVec| -> f64 {
            let gx = (funcs.constraints)(x);
            (funcs.cost)(x) + rho * gx.iter().map(|v| v.max(0.0)).sum::<f64>()
        };
        let m0 = merit(&u);
        let mut a = 1.0_f64;
        let mut accepted = false;
        while a >= 1e-4 {
            let cand = &u + &d * a;
            if merit(&cand) < m0 - 1e-12 * a {
                u = cand;
                accepted = true;
                break;
            }
            a *= 0.5;
        }
        if !accepted {
            // No merit progress: either done or stalled.
            break;
        }

        let res = kkt_residual(funcs, &u, &lam, true)?;
        best_res = best_res.min(res);
        if res <= opts.kkt_tol || (a * d.norm()) <= 1e-13 * (1.0 + u.norm()) {
            break;
        }
    }

    let res = kkt_residual(funcs, &u, &lam, true)?;
    let g = (funcs.constraints)(&u);
    let active_set: Vec<usize> = (0..funcs.n_g)
        .filter(|&i| g[i].abs() <= opts.feas_tol || lam[i] > opts.kkt_tol)
        .collect();
    Ok(NlpSolution {
        objective: (funcs.cost)(&u),
        u_star: u,
        multipliers: lam,
        active_set,
        converged: res <= opts.kkt_tol,
        iterations,
        kkt_residual: res,
    })
}

/// Infeasible-subproblem fallback: minimize 0.5|d|^2 + big * sum(slack).
fn elastic_step(p: &QpProblem) -> Result<NlpSolution, SolverError> {
    let n = p.n_u();
    let m = p.n_c();
    let big = 1e3;
    let dim = n + m;
    let mut qmat = DMatrix::zeros(dim, dim);
    for i in 0..n {
        qmat[(i, i)] = 1.0;
    }
    for i in n..dim {
        qmat[(i, i)] = 1e-6;
    }
    let mut q = DVector::zeros(dim);
    for i in n..dim {
        q[i] = big;
    }
    // rows: h + Hd - s <= 0 ; -s <= 0
    let mut hmat = DMatrix::zeros(2 * m, dim);
    let mut h = DVector::zeros(2 * m);
    for r in 0..m {
        for c in 0..n {
            hmat[(r, c)] = p.hmat[(r, c)];
        }
        hmat[(r, n + r)] = -1.0;
        h[r] = p.h[r];
        hmat[(m + r, n + r)] = -1.0;
        h[m + r] = 0.0;
    }
    let elastic = QpProblem::new(
        0.0,
        q,
        qmat,
        h,
        hmat,
        vec![ConstraintKind::Inequality; 2 * m],
    )?;
    let mut start = DVector::zeros(dim);
    // Start with slacks covering the violation at d = 0.
    for r in 0..m {
        start[n + r] = p.h[r].max(0.0);
    }
    let sol = solve_inequality_qp(&elastic, &start)?;
    let d = sol.u_star.rows(0, n).into_owned();
    let mut multipliers = DVector::zeros(m);
    for r in 0..m {
        multipliers[r] = sol.multipliers[r];
    }
    Ok(NlpSolution {
        objective: p.objective(&d),
        u_star: d,
        multipliers,
        active_set: vec![],
        converged: false,
        iterations: sol.iterations,
        kkt_residual: f64::INFINITY,
    })
}

fn default_starts(u0: &DVec, opts: &NlpOptions) -> Vec<DVec> {
    let mut starts = vec![u0.clone()];
    if !opts.single_start {
        let n = u0.len();
        let widths: DVec = match &opts.bounds {
            Some(b) => b.widths(),
            None => DVector::from_iterator(n, u0.iter().map(|v| v.abs().max(1.0))),
        };
        for i in 0..n {
            for sgn in [1.0, -1.0] {
                let mut s = u0.clone();
                s[i] += sgn * 0.1 * widths[i];
                if let Some(b) = &opts.bounds {
                    s = b.clamp(&s);
                }
                starts.push(s);
            }
        }
    }
    for s in &opts.extra_starts {
        starts.push(s.clone());
    }
    starts
}

fn lex_smaller(a: &DVec, b: &DVec) -> bool {
    for i in 0..a.len() {
        if (a[i] - b[i]).abs() > 1e-12 {
            return a[i] < b[i];
        }
    }
    false
}

/// SQP with multi-start. Returns the best KKT point by objective among
/// converged feasible candidates; ties broken toward the lexicographically
/// smallest optimizer. Falls back to the best feasible, then to the least
/// infeasible iterate, flagged non-converged.
pub fn solve_nlp(
    funcs: &NlpFunctions,
    u0: &DVec,
    opts: &NlpOptions,
) -> Result<NlpSolution, SolverError> {
    let starts = default_starts(u0, opts);
    let mut best: Option<NlpSolution> = None;
    let mut best_fallback: Option<NlpSolution> = None;
    for s in &starts {
        let cand = match sqp_single(funcs, s, opts) {
            Ok(c) => c,
            Err(_) => continue,
        };
        let g = (funcs.constraints)(&cand.u_star);
        let feasible = g.iter().all(|v| *v <= opts.feas_tol);
        if cand.converged && feasible {
            let better = match &best {
                None => true,
                Some(b) => {
                    cand.objective < b.objective - 1e-12
                        || ((cand.objective - b.objective).abs() <= 1e-12
                            && lex_smaller(&cand.u_star, &b.u_star))
                }
            };
            if better {
                best = Some(cand);
            }
        } else {
            let score = if feasible {
                cand.objective
            } else {
                f64::INFINITY
            };
            let better = match &best_fallback {
                None => true,
                Some(b) => {
                    let bscore = if (funcs.constraints)(&b.u_star)
                        .iter()
                        .all(|v| *v <= opts.feas_tol)
                    {
                        b.objective
                    } else {
                        f64::INFINITY
                    };
                    score < bscore || (score == f64::INFINITY && cand.kkt_residual < b.kkt_residual)
                }
            };
            if better {
                best_fallback = Some(cand);
            }
        }
    }
    match best.or(best_fallback) {
        Some(sol) => Ok(sol),
        None => Err(SolverError::Infeasible(
            "no SQP start produced an iterate".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_parabola() {
        let funcs = NlpFunctions::unconstrained(|u: &DVec| (u[0] - 1.0) * (u[0] - 1.0));
        let sol = solve_nlp(&funcs, &DVector::zeros(1), &NlpOptions::default()).unwrap();
        assert_relative_eq!(sol.u_star[0], 1.0, epsilon = 1e-8);
        assert!(sol.converged);
    }

    #[test]
    fn constrained_scalar() {
        // min (u-2)^2 s.t. u <= 1 -> u*=1, lam=2
        let funcs = NlpFunctions::from_closures(
            |u: &DVec| (u[0] - 2.0) * (u[0] - 2.0),
            |u: &DVec| DVector::from_vec(vec![u[0] - 1.0]),
            1,
        );
        let sol = solve_nlp(&funcs, &DVector::zeros(1), &NlpOptions::default()).unwrap();
        assert_relative_eq!(sol.u_star[0], 1.0, epsilon = 1e-7);
        assert_relative_eq!(sol.multipliers[0], 2.0, epsilon = 1e-5);
        assert_eq!(sol.active_set, vec![0]);
    }

    #[test]
    fn quadratic_model_step_matches_closed_form() {
        // phi_k(u) = phi_p(0) + (-2) u + u^2/4, box [-5,5]:
        // stationarity u/2 - 2 = 0 -> sol = 4.
        let funcs = NlpFunctions::from_closures(
            |u: &DVec| 1.0 - 2.0 * u[0] + u[0] * u[0] / 4.0,
            |u: &DVec| DVector::from_vec(vec![u[0] - 5.0, -5.0 - u[0]]),
            2,
        );
        let sol = solve_nlp(&funcs, &DVector::zeros(1), &NlpOptions::default()).unwrap();
        assert_relative_eq!(sol.u_star[0], 4.0, epsilon = 1e-7);
    }
}
