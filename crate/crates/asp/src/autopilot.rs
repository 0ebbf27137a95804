use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::RngCore;
use rto_core::types::{Bounds, NoiseSource, PlantInterface, ScalarMap, VectorMap};
use rto_core::DVec;
use rto_gp::GpPosterior;

use crate::compress::{cluster_and_regress, incremental_compress, AspRecord, CompressedDatabase};
use crate::data::{ctp_check, summarize_experiment, CtpVerdict, MeasurementSequence};
use crate::decision::{
    check_convergence, decision_trigger, designer_next_probe, optimality_indicators,
    select_experiment, Action, DecisionConfig, Event, OutputPosteriors,
};
use crate::error::AspError;
use crate::vcl::{build_vcl, VclLaw};

/// The autopilot's standing problem description.
pub struct AspProblem {
    pub plant: Arc<PlantInterface>,
    pub cost: ScalarMap,
    pub constraints: VectorMap,
    pub n_g: usize,
    pub n_y: usize,
    pub bounds: Bounds,
    /// One prior per output over x = (u, d').
    pub priors: Vec<rto_gp::GpPrior>,
    /// Per-sample measurement noise variance per output.
    pub noise_var: DVec,
}

#[derive(Clone)]
pub struct AspConfig {
    pub decision: DecisionConfig,
    pub samples_per_experiment: usize,
    /// Hours per steady-state period (one experiment or monitoring slot).
    pub period_hours: f64,
    /// Validation loop enabled; without it, convergence enters stand-by
    /// unverified.
    pub validation: bool,
    pub nlp: rto_solver::NlpOptions,
    pub u0: DVec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AspStatus {
    Searching,
    Validating,
    Standby,
}

#[derive(Debug, Clone)]
pub struct PeriodRecord {
    pub period: usize,
    pub t_hours: f64,
    pub u_applied: DVec,
    pub d_meas: DVec,
    pub y_mean: DVec,
    pub status: AspStatus,
    pub action: Action,
    pub reset: bool,
    pub decision: bool,
    pub probe: bool,
    pub loss_max: Option<f64>,
    pub predicted_cost: Option<f64>,
    pub db_rows: usize,
    pub db_records: usize,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeLog {
    pub decisions: usize,
    pub probes: usize,
    pub resets: usize,
    pub standby_entries: usize,
    pub probe_cap_hits: usize,
}

fn x_of(u: &DVec, d: &DVec) -> DVec {
    let mut x = DVector::zeros(u.len() + d.len());
    for i in 0..u.len() {
        x[i] = u[i];
    }
    for i in 0..d.len() {
        x[u.len() + i] = d[i];
    }
    x
}

/// Backed-off hard rows plus input-box rows at fixed measured disturbance.
#[allow(clippy::too_many_arguments)]
fn backed_rows_at<'a>(
    posteriors: &'a [GpPosterior],
    cost_free_constraints: VectorMap,
    n_g: usize,
    n_y: usize,
    bounds: Bounds,
    hard: Vec<bool>,
    d_meas: DVec,
) -> impl Fn(&DVec) -> DVec + 'a {
    move |u: &DVec| {
        let x = x_of(u, &d_meas);
        let op = OutputPosteriors { posteriors };
        let (mean, var) = op.mean_var(&x);
        let g = (cost_free_constraints)(u, &mean);
        let n_u = u.len();
        let mut rows = DVector::zeros(n_g + 2 * n_u);
        for i in 0..n_g {
            let mut backoff = 0.0;
            if hard.get(i).copied().unwrap_or(true) {
                let mut s2 = 0.0;
                for j in 0..n_y {
                    let h = 1e-6 * mean[j].abs().max(1.0);
                    let mut yp = mean.clone();
                    yp[j] += h;
                    let dgdy = ((cost_free_constraints)(u, &yp)[i] - g[i]) / h;
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
    }
}

/// Feedback law from the posterior-mean cost and the active backed-off
/// rows (free function so no solver state is captured).
#[allow(clippy::too_many_arguments)]
pub fn build_law_from(
    posteriors: &[GpPosterior],
    cost: ScalarMap,
    constraints: VectorMap,
    n_g: usize,
    n_y: usize,
    bounds: &Bounds,
    hard: &[bool],
    validity_halfwidth: &DVec,
    u_star: &DVec,
    d_meas: &DVec,
    active_set: Vec<usize>,
) -> Result<VclLaw, AspError> {
    let n_u = u_star.len();
    let active: Vec<usize> = active_set
        .iter()
        .copied()
        .filter(|i| *i < n_g + 2 * n_u)
        .collect();
    let n_active = active.len();
    let cost_fn = {
        let cost = cost.clone();
        move |u: &DVec, d: &DVec| -> f64 {
            let x = x_of(u, d);
            let op = OutputPosteriors { posteriors };
            cost(u, &op.mean(&x))
        }
    };
    let hard = hard.to_vec();
    let bounds_c = bounds.clone();
    let rows_fn = {
        let constraints = constraints.clone();
        let active = active.clone();
        move |u: &DVec, d: &DVec| -> DVec {
            let x = x_of(u, d);
            let op = OutputPosteriors { posteriors };
            let (mean, var) = op.mean_var(&x);
            let g = constraints(u, &mean);
            DVector::from_iterator(
                active.len(),
                active.iter().map(|&i| {
                    if i < n_g {
                        let mut s2 = 0.0;
                        if hard.get(i).copied().unwrap_or(true) {
                            for j in 0..n_y {
                                let h = 1e-6 * mean[j].abs().max(1.0);
                                let mut yp = mean.clone();
                                yp[j] += h;
                                let dgdy = (constraints(u, &yp)[i] - g[i]) / h;
                                s2 += dgdy * dgdy * var[j];
                            }
                        }
                        g[i] + 2.0 * s2.sqrt()
                    } else if i < n_g + n_u {
                        u[i - n_g] - bounds_c.upper[i - n_g]
                    } else {
                        bounds_c.lower[i - n_g - n_u] - u[i - n_g - n_u]
                    }
                }),
            )
        }
    };
    build_vcl(
        &cost_fn,
        &rows_fn,
        n_active,
        u_star,
        d_meas,
        validity_halfwidth,
        active,
    )
}

/// One autopilot instance driving one plant scenario.
pub struct Autopilot<R: RngCore> {
    pub problem: AspProblem,
    pub config: AspConfig,
    pub db: CompressedDatabase,
    pub posteriors: Vec<GpPosterior>,
    pub status: AspStatus,
    pub u_current: DVec,
    pub vcl: Option<VclLaw>,
    pub log: EpisodeLog,
    pub history: Vec<PeriodRecord>,
    probes_this_episode: usize,
    last_x_hat: Option<DVec>,
    cluster_rng: R,
    period: usize,
}

impl<R: RngCore> Autopilot<R> {
    pub fn new(problem: AspProblem, config: AspConfig, cluster_rng: R) -> Result<Self, AspError> {
        config.decision.validate()?;
        let posteriors = problem
            .priors
            .iter()
            .map(|p| GpPosterior::fit(p.clone(), rto_gp::GpDataset::new()))
            .collect::<Result<Vec<_>, _>>()?;
        let db = CompressedDatabase {
            clusters: vec![],
            half_widths: config.decision.half_widths.clone(),
            gamma: config.decision.gamma,
        };
        let u0 = config.u0.clone();
        Ok(Autopilot {
            problem,
            config,
            db,
            posteriors,
            status: AspStatus::Searching,
            u_current: u0,
            vcl: None,
            log: EpisodeLog::default(),
            history: vec![],
            probes_this_episode: 0,
            last_x_hat: None,
            cluster_rng,
            period: 0,
        })
    }

    fn rebuild_posteriors(&mut self) -> Result<(), AspError> {
        self.posteriors = self
            .problem
            .priors
            .iter()
            .enumerate()
            .map(|(j, p)| GpPosterior::fit(p.clone(), self.db.dataset_for_output(j)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(())
    }

    fn reset_database(&mut self, keep: AspRecord) -> Result<(), AspError> {
        self.db = cluster_and_regress(
            &[keep],
            &self.problem.priors,
            &self.config.decision.half_widths,
            self.config.decision.gamma,
            &mut self.cluster_rng,
        )?;
        self.rebuild_posteriors()
    }

    /// Run the selector at the given disturbance (also used by the
    /// re-solve oracle checks).
    pub fn run_selector(
        &self,
        d_meas: &DVec,
        u_start: &DVec,
    ) -> Result<crate::decision::SelectorOutcome, AspError> {
        let cost = self.problem.cost.clone();
        let cons = self.problem.constraints.clone();
        select_experiment(
            &self.posteriors,
            &move |u, y| cost(u, y),
            &move |u, y| cons(u, y),
            self.problem.n_g,
            d_meas,
            &self.problem.bounds,
            &self.config.decision,
            u_start,
            &self.config.nlp,
        )
    }

    /// Build the feedback law at a stand-by point.
    pub fn law_at(
        &self,
        u_star: &DVec,
        d_meas: &DVec,
        active_set: Vec<usize>,
    ) -> Result<VclLaw, AspError> {
        build_law_from(
            &self.posteriors,
            self.problem.cost.clone(),
            self.problem.constraints.clone(),
            self.problem.n_g,
            self.problem.n_y,
            &self.problem.bounds,
            &self.config.decision.hard,
            &self.config.decision.validity_halfwidth,
            u_star,
            d_meas,
            active_set,
        )
    }

    /// One steady-state period: apply the input (through the feedback law
    /// in stand-by), measure, maintain the database, react to events,
    /// decide.
    pub fn run_period(
        &mut self,
        d_meas: &DVec,
        d_unmeas: &DVec,
        scripted_events: &[Event],
        noise: &mut dyn NoiseSource,
    ) -> Result<PeriodRecord, AspError> {
        let t0 = Instant::now();
        let period = self.period;
        self.period += 1;
        let t_hours = period as f64 * self.config.period_hours;

        let u_applied = if self.status == AspStatus::Standby {
            match &self.vcl {
                Some(law) => self.problem.bounds.clamp(&law.input_for(d_meas)),
                None => self.u_current.clone(),
            }
        } else {
            self.u_current.clone()
        };

        // Experiment: the steady-state sample block.
        let mut samples = Vec::with_capacity(self.config.samples_per_experiment);
        let mut timestamps = Vec::with_capacity(self.config.samples_per_experiment);
        for s in 0..self.config.samples_per_experiment {
            let m = self.problem.plant.eval(&u_applied, d_meas, d_unmeas, noise)?;
            samples.push(DVector::from_vec(m.y));
            timestamps.push(t_hours + s as f64 * 1e-3);
        }
        let seq = MeasurementSequence {
            experiment: period,
            x_hat: x_of(&u_applied, d_meas),
            samples,
            timestamps,
        };
        let summary = summarize_experiment(&seq, Some(&self.problem.noise_var))?;
        let record = AspRecord {
            x: summary.x_hat.clone(),
            y: summary.y_mean.clone(),
            sigma2: summary.mean_var.clone(),
            t: summary.t_mean,
        };

        // Consistency monitoring: a surprising observation ends the
        // consistent time period; only the newest record is kept.
        let mut reset = false;
        if self.db.record_count() > 0 {
            let op = OutputPosteriors {
                posteriors: &self.posteriors,
            };
            let (pred_mean, pred_var) = op.mean_var(&record.x);
            // Predictive band: what the next observation should look like,
            // i.e. the function posterior plus the observation's own mean
            // noise. Without that term, a collapsed posterior would flag
            // ordinary measurement scatter as a transition.
            let predictive_var = &pred_var + &record.sigma2;
            if ctp_check(&record.y, &record.sigma2, &pred_mean, &predictive_var)
                == CtpVerdict::Transition
            {
                reset = true;
            }
        }
        if reset {
            self.reset_database(record.clone())?;
            self.log.resets += 1;
            self.status = AspStatus::Searching;
            self.probes_this_episode = 0;
            self.vcl = None;
        } else {
            incremental_compress(&mut self.db, record.clone(), &self.problem.priors)?;
            self.rebuild_posteriors()?;
        }

        // Event handling.
        let mut events: Vec<Event> = scripted_events.to_vec();
        if self.status == AspStatus::Standby {
            if let Some(law) = &self.vcl {
                if !law.within_validity(d_meas) {
                    events.push(Event::SignificantDisturbance);
                }
            }
        }
        let action = decision_trigger(&events);
        match action {
            Action::Emergency | Action::Reset => {
                self.reset_database(record.clone())?;
                self.log.resets += 1;
                self.status = AspStatus::Searching;
                self.vcl = None;
            }
            Action::Reoptimize | Action::StandbyExit => {
                self.status = AspStatus::Searching;
                self.vcl = None;
            }
            Action::None => {}
        }

        // Decision making.
        let mut decision = false;
        let mut probe = false;
        let mut loss_max = None;
        let mut predicted_cost = None;
        if self.status != AspStatus::Standby {
            decision = true;
            self.log.decisions += 1;
            let sel = match self.run_selector(d_meas, &u_applied) {
                Ok(s) => s,
                Err(AspError::EmergencySignal) => {
                    self.reset_database(record.clone())?;
                    self.log.resets += 1;
                    self.run_selector(d_meas, &u_applied)?
                }
                Err(e) => return Err(e),
            };
            predicted_cost = Some(sel.predicted_cost);
            let x_prev = self
                .last_x_hat
                .clone()
                .unwrap_or_else(|| summary.x_hat.clone());
            let x_next = x_of(&sel.u_next, d_meas);
            if check_convergence(&x_next, &x_prev, &self.config.decision.half_widths) {
                if !self.config.validation {
                    self.enter_standby(&sel.u_next, d_meas, sel.solution.active_set.clone());
                } else {
                    let cost = self.problem.cost.clone();
                    let cons = self.problem.constraints.clone();
                    let ind = optimality_indicators(
                        &self.posteriors,
                        &move |u, y| cost(u, y),
                        &move |u, y| cons(u, y),
                        self.problem.n_g,
                        &sel.u_next,
                        d_meas,
                        &sel.solution.active_set,
                        &sel.solution.multipliers,
                        &self.config.decision,
                    )?;
                    loss_max = Some(ind.loss_max);
                    if ind.loss_max <= self.config.decision.loss_acc {
                        self.enter_standby(&sel.u_next, d_meas, sel.solution.active_set.clone());
                    } else if self.probes_this_episode < self.config.decision.probe_cap {
                        let probe_point = {
                            let rows = backed_rows_at(
                                &self.posteriors,
                                self.problem.constraints.clone(),
                                self.problem.n_g,
                                self.problem.n_y,
                                self.problem.bounds.clone(),
                                self.config.decision.hard.clone(),
                                d_meas.clone(),
                            );
                            designer_next_probe(
                                &sel.u_next,
                                &ind.v_search,
                                &self.config.decision,
                                &rows,
                            )
                        };
                        match probe_point {
                            Some(p) => {
                                self.status = AspStatus::Validating;
                                self.u_current = self.problem.bounds.clamp(&p);
                                probe = true;
                                self.probes_this_episode += 1;
                                self.log.probes += 1;
                            }
                            None => {
                                self.enter_standby(
                                    &sel.u_next,
                                    d_meas,
                                    sel.solution.active_set.clone(),
                                );
                            }
                        }
                    } else {
                        // Probe budget exhausted: stand by anyway, surfaced
                        // in the log.
                        self.log.probe_cap_hits += 1;
                        self.enter_standby(&sel.u_next, d_meas, sel.solution.active_set.clone());
                    }
                }
            } else {
                self.u_current = sel.u_next.clone();
                self.status = AspStatus::Searching;
                self.probes_this_episode = 0;
            }
        }
        self.last_x_hat = Some(summary.x_hat.clone());

        let rec = PeriodRecord {
            period,
            t_hours,
            u_applied,
            d_meas: d_meas.clone(),
            y_mean: summary.y_mean.clone(),
            status: self.status,
            action,
            reset,
            decision,
            probe,
            loss_max,
            predicted_cost,
            db_rows: self.db.row_count(),
            db_records: self.db.record_count(),
            duration_s: t0.elapsed().as_secs_f64(),
        };
        self.history.push(rec.clone());
        Ok(rec)
    }

    fn enter_standby(&mut self, u_star: &DVec, d_meas: &DVec, active_set: Vec<usize>) {
        self.u_current = u_star.clone();
        self.status = AspStatus::Standby;
        self.log.standby_entries += 1;
        self.probes_this_episode = 0;
        self.vcl = self.law_at(u_star, d_meas, active_set).ok();
    }
}
