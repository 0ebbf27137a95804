use nalgebra::{DMatrix, DVector};
use rto_core::types::Bounds;
use rto_core::{DMat, DVec};
use rto_gp::GpPosterior;
use rto_solver::{solve_nlp, NlpFunctions, NlpOptions, NlpSolution};

use crate::error::AspError;

/// Engineer-side decision parameters.
#[derive(Debug, Clone)]
pub struct DecisionConfig {
    /// Cost improvement below which an operating point is acceptable ($/h).
    pub loss_acc: f64,
    /// Diagonal scaling: a "small" variation per input.
    pub du_scal: DVec,
    /// Hard/soft tag per constraint row (hard rows receive the back-off).
    pub hard: Vec<bool>,
    /// Acceptable feedback-law error per input.
    pub zeta: DVec,
    /// Validity box for measured-disturbance deviations.
    pub validity_halfwidth: DVec,
    /// Rectangle half-widths on the GP inputs (convergence test and
    /// clustering).
    pub half_widths: DVec,
    pub gamma: f64,
    /// Probe budget per validation episode.
    pub probe_cap: usize,
}

impl DecisionConfig {
    pub fn validate(&self) -> Result<(), AspError> {
        if self.loss_acc <= 0.0 {
            return Err(AspError::Dimension("loss_acc must be positive".into()));
        }
        if self.du_scal.iter().any(|v| *v <= 0.0) {
            return Err(AspError::Dimension("du_scal must be positive".into()));
        }
        Ok(())
    }
}

/// Mean and variance of every output at x = (u, d').
pub struct OutputPosteriors<'a> {
    pub posteriors: &'a [GpPosterior],
}

impl<'a> OutputPosteriors<'a> {
    pub fn mean(&self, x: &DVec) -> DVec {
        DVector::from_iterator(
            self.posteriors.len(),
            self.posteriors.iter().map(|p| p.predict(x).0),
        )
    }

    pub fn mean_var(&self, x: &DVec) -> (DVec, DVec) {
        let mut m = DVector::zeros(self.posteriors.len());
        let mut v = DVector::zeros(self.posteriors.len());
        for (j, p) in self.posteriors.iter().enumerate() {
            let (mj, vj) = p.predict(x);
            m[j] = mj;
            v[j] = vj;
        }
        (m, v)
    }
}

pub struct SelectorOutcome {
    pub u_next: DVec,
    pub predicted_cost: f64,
    pub predicted_constraints: DVec,
    pub constraint_backoffs: DVec,
    pub output_variances: DVec,
    pub solution: NlpSolution,
}

/// Uncertainty-aware experiment selection: minimize the expected cost
/// subject to hard constraints evaluated at their probable upper bound
/// (two-sigma back-off propagated through the output sensitivities) and
/// soft constraints at their expectation.
#[allow(clippy::too_many_arguments)]
pub fn select_experiment(
    posteriors: &[GpPosterior],
    cost: &(dyn Fn(&DVec, &DVec) -> f64 + Sync),
    constraints: &(dyn Fn(&DVec, &DVec) -> DVec + Sync),
    n_g: usize,
    d_meas: &DVec,
    bounds: &Bounds,
    config: &DecisionConfig,
    u_start: &DVec,
    nlp: &NlpOptions,
) -> Result<SelectorOutcome, AspError> {
    config.validate()?;
    let op = OutputPosteriors { posteriors };
    let n_u = bounds.dim();
    let x_of = |u: &DVec| -> DVec {
        let mut x = DVector::zeros(n_u + d_meas.len());
        for i in 0..n_u {
            x[i] = u[i];
        }
        for i in 0..d_meas.len() {
            x[n_u + i] = d_meas[i];
        }
        x
    };
    let n_y = posteriors.len();

    let backed_rows = |u: &DVec| -> DVec {
        let x = x_of(u);
        let (mean, var) = op.mean_var(&x);
        let g = constraints(u, &mean);
        let mut rows = DVector::zeros(n_g + 2 * n_u);
        for i in 0..n_g {
            let mut backoff = 0.0;
            if config.hard.get(i).copied().unwrap_or(true) {
                // Sensitivities of row i to each output.
                let mut s2 = 0.0;
                for j in 0..n_y {
                    let h = 1e-6 * mean[j].abs().max(1.0);
                    let mut yp = mean.clone();
                    yp[j] += h;
                    let gp = constraints(u, &yp);
                    let dgdy = (gp[i] - g[i]) / h;
                    s2 += dgdy * dgdy * var[j];
                }
                backoff = 2.0 * s2.sqrt();
            }
            rows[i] = g[i] + backoff;
        }
        for i in 0..n_u {
            rows[n_g + i] = u[i] - bounds.upper[i];
            rows[n_g + n_u + i] = bounds.lower[i] - u[i];
        }
        rows
    };
    let expected_cost = |u: &DVec| -> f64 {
        let x = x_of(u);
        cost(u, &op.mean(&x))
    };

    let funcs = NlpFunctions {
        cost: Box::new(expected_cost),
        cost_grad: None,
        constraints: Box::new(backed_rows),
        constraints_jac: None,
        n_g: n_g + 2 * n_u,
    };
    let mut opts = nlp.clone();
    opts.bounds = Some(bounds.clone());
    let sol = solve_nlp(&funcs, u_start, &opts)?;
    let rows_at = backed_rows(&sol.u_star);
    let feasible = rows_at.iter().all(|v| *v <= 1e-6);
    if !feasible {
        return Err(AspError::EmergencySignal);
    }
    let x = x_of(&sol.u_star);
    let (mean, var) = op.mean_var(&x);
    let g = constraints(&sol.u_star, &mean);
    let mut backoffs = DVector::zeros(n_g);
    for i in 0..n_g {
        backoffs[i] = rows_at[i] - g[i];
    }
    Ok(SelectorOutcome {
        u_next: sol.u_star.clone(),
        predicted_cost: sol.objective,
        predicted_constraints: g,
        constraint_backoffs: backoffs,
        output_variances: var,
        solution: sol,
    })
}

/// Convergence is declared when the next point stays inside the closed
/// rectangle centered on the current one.
pub fn check_convergence(x_next: &DVec, x_prev: &DVec, half_widths: &DVec) -> bool {
    x_next
        .iter()
        .zip(x_prev.iter())
        .zip(half_widths.iter())
        .all(|((a, b), w)| (a - b).abs() <= w / 2.0 + 1e-12)
}

/// Validation indicators at a tentative optimum.
#[derive(Debug, Clone)]
pub struct Indicators {
    /// Worst probable loss from cost-gradient uncertainty in the
    /// unconstrained directions.
    pub a_loss: f64,
    /// Probable loss priced by the active-constraint multipliers.
    pub b_loss: f64,
    /// Activation-doubt flag: the sign of the projected cost gradient is
    /// uncertain.
    pub c_flag: bool,
    pub v_search: DVec,
    pub loss_max: f64,
    pub grad_mean: DVec,
    pub grad_cov: DMat,
}

/// Compute the three validation indicators from the joint value+gradient
/// posterior of every output, propagated through the cost and constraints.
#[allow(clippy::too_many_arguments)]
pub fn optimality_indicators(
    posteriors: &[GpPosterior],
    cost: &(dyn Fn(&DVec, &DVec) -> f64 + Sync),
    constraints: &(dyn Fn(&DVec, &DVec) -> DVec + Sync),
    n_g: usize,
    u: &DVec,
    d_meas: &DVec,
    active_set: &[usize],
    multipliers: &DVec,
    config: &DecisionConfig,
) -> Result<Indicators, AspError> {
    config.validate()?;
    if !active_set.is_empty() && multipliers.len() < n_g {
        return Err(AspError::MissingMultipliers);
    }
    let n_u = u.len();
    let n_y = posteriors.len();
    let mut x = DVector::zeros(n_u + d_meas.len());
    for i in 0..n_u {
        x[i] = u[i];
    }
    for i in 0..d_meas.len() {
        x[n_u + i] = d_meas[i];
    }

    // Joint posterior blocks per output, restricted to the u coordinates.
    let mut means = DVector::zeros(n_y);
    let mut value_vars = DVector::zeros(n_y);
    let mut grad_means: Vec<DVec> = Vec::with_capacity(n_y);
    let mut grad_covs: Vec<DMat> = Vec::with_capacity(n_y);
    let mut cross_covs: Vec<DVec> = Vec::with_capacity(n_y);
    for p in posteriors {
        let (m, c) = p.predict_value_and_gradient(&x);
        let j = grad_means.len();
        means[j] = m[0];
        value_vars[j] = c[(0, 0)].max(0.0);
        grad_means.push(m.rows(1, n_u).into_owned());
        grad_covs.push(c.view((1, 1), (n_u, n_u)).into_owned());
        cross_covs.push(c.view((1, 0), (n_u, 1)).column(0).into_owned());
    }

    // Cost sensitivities at (u, mean outputs).
    let base_cost = cost(u, &means);
    let dphi_dy = {
        let mut v = DVector::zeros(n_y);
        for j in 0..n_y {
            let h = 1e-6 * means[j].abs().max(1.0);
            let mut yp = means.clone();
            yp[j] += h;
            v[j] = (cost(u, &yp) - base_cost) / h;
        }
        v
    };
    // l_j = d_u d_{y_j} phi + (grad_u f)^T d_y d_{y_j} phi via finite
    // differences of the sensitivity vector along u.
    let grad_mean_matrix = {
        let mut m = DMatrix::zeros(n_y, n_u);
        for (j, g) in grad_means.iter().enumerate() {
            for i in 0..n_u {
                m[(j, i)] = g[i];
            }
        }
        m
    };
    let mut l_vecs: Vec<DVec> = Vec::with_capacity(n_y);
    for j in 0..n_y {
        let mut l = DVector::zeros(n_u);
        for i in 0..n_u {
            let h = 1e-5 * u[i].abs().max(1.0);
            let mut up = u.clone();
            up[i] += h;
            let mut um = u.clone();
            um[i] -= h;
            // Outputs move with the mean model when u moves.
            let yp = &means + grad_mean_matrix.column(i) * h;
            let ym = &means - grad_mean_matrix.column(i) * h;
            let sp = {
                let hh = 1e-6 * means[j].abs().max(1.0);
                let mut ypp = yp.clone();
                ypp[j] += hh;
                (cost(&up, &ypp) - cost(&up, &yp)) / hh
            };
            let sm = {
                let hh = 1e-6 * means[j].abs().max(1.0);
                let mut ymm = ym.clone();
                ymm[j] += hh;
                (cost(&um, &ymm) - cost(&um, &ym)) / hh
            };
            l[i] = (sp - sm) / (2.0 * h);
        }
        l_vecs.push(l);
    }

    // E[grad phi] via the chain rule on the posterior means.
    let mut grad_mean = DVector::zeros(n_u);
    for i in 0..n_u {
        let h = 1e-5 * u[i].abs().max(1.0);
        let mut up = u.clone();
        up[i] += h;
        let mut um = u.clone();
        um[i] -= h;
        let yp = &means + grad_mean_matrix.column(i) * h;
        let ym = &means - grad_mean_matrix.column(i) * h;
        grad_mean[i] = (cost(&up, &yp) - cost(&um, &ym)) / (2.0 * h);
    }

    // V[grad phi] assembled from the per-output joint blocks.
    let mut grad_cov = DMatrix::zeros(n_u, n_u);
    for j in 0..n_y {
        let lj = &l_vecs[j];
        let lpj = dphi_dy[j];
        grad_cov += lj * lj.transpose() * value_vars[j];
        grad_cov += &grad_covs[j] * (lpj * lpj);
        let cross = lj * cross_covs[j].transpose() * lpj;
        grad_cov += &cross + cross.transpose();
    }
    grad_cov = 0.5 * (&grad_cov + grad_cov.transpose());

    // Active-constraint gradients (expected) for the projection.
    let g_base = constraints(u, &means);
    let mut active_grads: Vec<DVec> = vec![];
    for &i in active_set {
        if i >= n_g {
            continue; // box rows carry exact gradients; they do not doubt.
        }
        let mut gg = DVector::zeros(n_u);
        for c in 0..n_u {
            let h = 1e-5 * u[c].abs().max(1.0);
            let mut up = u.clone();
            up[c] += h;
            let mut um = u.clone();
            um[c] -= h;
            let yp = &means + grad_mean_matrix.column(c) * h;
            let ym = &means - grad_mean_matrix.column(c) * h;
            gg[c] = (constraints(&up, &yp)[i] - constraints(&um, &ym)[i]) / (2.0 * h);
        }
        if gg.norm() > 1e-12 {
            active_grads.push(gg);
        }
    }

    // Scaled projection onto the unconstrained directions.
    let d_scal = DMatrix::from_diagonal(&config.du_scal);
    let mut proj = DMatrix::identity(n_u, n_u);
    for g in &active_grads {
        let n2 = g.norm_squared();
        proj -= g * g.transpose() / n2;
    }
    let m_unc = &proj * &d_scal;
    let quad_unc = m_unc.transpose() * &grad_cov * &m_unc;
    let eig = (0.5 * (&quad_unc + quad_unc.transpose())).symmetric_eigen();
    let mut a_loss = 0.0_f64;
    let mut v_search = DVector::zeros(n_u);
    v_search[0] = 1.0;
    let mut best = f64::NEG_INFINITY;
    for (idx, lam) in eig.eigenvalues.iter().enumerate() {
        if *lam > best {
            best = *lam;
            a_loss = 2.0 * lam.max(0.0).sqrt();
            v_search = eig.eigenvectors.column(idx).into_owned();
        }
    }
    if v_search[0] < 0.0 {
        v_search = -v_search;
    }

    // Indicator B: multiplier-priced uncertainty on the active rows.
    let mut b_loss = 0.0;
    for &i in active_set {
        if i >= n_g {
            continue;
        }
        let mut s2 = 0.0;
        for j in 0..n_y {
            let h = 1e-6 * means[j].abs().max(1.0);
            let mut yp = means.clone();
            yp[j] += h;
            let dgdy = (constraints(u, &yp)[i] - g_base[i]) / h;
            s2 += dgdy * dgdy * value_vars[j];
        }
        b_loss += 2.0 * multipliers[i].max(0.0) * s2.sqrt();
    }

    // Indicator C: sign doubt of the cost gradient along the constrained
    // directions.
    let mut c_flag = false;
    let m_con = (&DMatrix::identity(n_u, n_u) - &proj) * &d_scal;
    for g in &active_grads {
        let v = &m_con * (g / g.norm());
        let var = (v.transpose() * &grad_cov * &v)[(0, 0)].max(0.0);
        if v.norm() > 1e-12 && v.dot(&grad_mean).abs() < 2.0 * var.sqrt() {
            c_flag = true;
        }
    }

    Ok(Indicators {
        a_loss,
        b_loss,
        c_flag,
        v_search,
        loss_max: a_loss + b_loss,
        grad_mean,
        grad_cov,
    })
}

/// Triggering events, scripted or detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    /// E1: a cost or constraint changed.
    CostOrConstraintChange,
    /// E2: a new updated model is available.
    NewModel,
    /// E3: operators are not satisfied with the running experiment.
    OperatorIntervention,
    /// E4: a significant measured-disturbance variation.
    SignificantDisturbance,
    /// E5: a behavioral anomaly (or a consistency transition).
    Anomaly,
    /// E6: operators request a decision.
    OperatorRequest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Reoptimize,
    Emergency,
    Reset,
    StandbyExit,
    None,
}

/// Deterministic event-to-action mapping; the most disruptive applicable
/// action wins when several events coincide.
pub fn decision_trigger(events: &[Event]) -> Action {
    let mut action = Action::None;
    let rank = |a: Action| match a {
        Action::Emergency => 4,
        Action::Reset => 3,
        Action::Reoptimize => 2,
        Action::StandbyExit => 1,
        Action::None => 0,
    };
    for e in events {
        let candidate = match e {
            Event::OperatorIntervention => Action::Emergency,
            Event::Anomaly => Action::Reset,
            Event::CostOrConstraintChange | Event::NewModel | Event::OperatorRequest => {
                Action::Reoptimize
            }
            Event::SignificantDisturbance => Action::Reoptimize,
        };
        if rank(candidate) > rank(action) {
            action = candidate;
        }
    }
    action
}

/// Next validation probe: the largest feasible fraction of a scaled step
/// along the search direction, reversing the direction when the forward
/// side is blocked.
pub fn designer_next_probe(
    u: &DVec,
    v_search: &DVec,
    config: &DecisionConfig,
    hard_rows: &dyn Fn(&DVec) -> DVec,
) -> Option<DVec> {
    let d_scal = DMatrix::from_diagonal(&config.du_scal);
    let feasible = |cand: &DVec| hard_rows(cand).iter().all(|v| *v <= 1e-9);
    // Largest feasible fraction per direction (bisection); the forward
    // direction wins only when it allows a full step, otherwise the
    // reversed direction is preferred when it can go further.
    let max_fraction = |dir: f64| -> f64 {
        let step = &d_scal * v_search * dir;
        if feasible(&(u + &step)) {
            return 1.0;
        }
        let mut lo = 0.0_f64;
        let mut hi = 1.0_f64;
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if feasible(&(u + &step * mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let fwd = max_fraction(1.0);
    if fwd >= 1.0 {
        return Some(u + &d_scal * v_search);
    }
    let rev = max_fraction(-1.0);
    let (dir, frac) = if rev > fwd { (-1.0, rev) } else { (1.0, fwd) };
    if frac > 1e-6 {
        Some(u + &d_scal * v_search * (dir * frac))
    } else {
        None
    }
}
