use rto_core::DVec;

/// Which gain-selection rule the adaptive branch applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterVariant {
    /// `max(K_o, 1/(1 - nabla))`, no upper bound.
    OptimalUnbounded,
    /// The same, capped at 1.
    Capped,
    /// `max(K_o, 2/(1 - nabla) - 0.1)`: just below the stability limit.
    Maximal,
    /// Adds `min(. , 2/(1 - delta))` with delta the smallest slope seen so
    /// far.
    Superstable,
}

/// Filter bookkeeping across iterations.
#[derive(Debug, Clone)]
pub struct FilterState {
    /// Gain applied at the previous iteration (K_{k-1}).
    pub gain: f64,
    /// Floor gain K_o.
    pub k_o: f64,
    /// Latest slope estimate of the anchored-optimizer map.
    pub nabla_est: Option<f64>,
    /// Running minimum of the slope estimates (superstability bound).
    pub delta_est: f64,
    /// Convergence threshold per axis.
    pub threshold: DVec,
    /// (u_k, u*_k) history, newest last.
    pub history: Vec<(DVec, DVec)>,
}

impl FilterState {
    pub fn new(k_o: f64, threshold: DVec, u0: &DVec) -> Self {
        FilterState {
            gain: k_o,
            k_o,
            nabla_est: None,
            delta_est: f64::INFINITY,
            threshold,
            history: vec![(u0.clone(), u0.clone())],
        }
    }
}

/// Inputs of one filter decision.
pub struct FilterContext<'a> {
    pub k: usize,
    pub u_k: &'a DVec,
    pub u_prev: Option<&'a DVec>,
    pub u_star_next: &'a DVec,
    pub u_star_prev: &'a DVec,
}

/// Slope of the anchored-optimizer map estimated from two consecutive
/// iterations: projection of the optimizer displacement on the input
/// displacement, normalized by the squared step.
pub fn nabla_estimate(u_k: &DVec, u_prev: &DVec, u_star_next: &DVec, u_star_prev: &DVec) -> f64 {
    let du = u_k - u_prev;
    let n2 = du.norm_squared();
    if n2 == 0.0 {
        return f64::INFINITY;
    }
    du.dot(&(u_star_next - u_star_prev)) / n2
}

fn step_within_threshold(u_k: &DVec, u_prev: &DVec, a: &DVec) -> bool {
    u_k.iter()
        .zip(u_prev.iter())
        .zip(a.iter())
        .all(|((x, y), t)| (x - y).abs() <= *t)
}

/// Gain formula of the adaptive branch given a slope estimate.
pub fn variant_gain(variant: FilterVariant, nabla: f64, delta: f64, k_o: f64) -> f64 {
    match variant {
        FilterVariant::OptimalUnbounded => {
            if nabla < 1.0 {
                k_o.max(1.0 / (1.0 - nabla))
            } else {
                1.0
            }
        }
        FilterVariant::Capped => {
            if nabla < 1.0 {
                k_o.max(1.0 / (1.0 - nabla)).min(1.0)
            } else {
                1.0
            }
        }
        FilterVariant::Maximal => {
            if nabla < 1.0 {
                k_o.max(2.0 / (1.0 - nabla) - 0.1)
            } else {
                1.0
            }
        }
        FilterVariant::Superstable => {
            let bound = if delta < 1.0 {
                2.0 / (1.0 - delta)
            } else {
                f64::INFINITY
            };
            if nabla < 1.0 {
                k_o.max((1.0 / (1.0 - nabla)).min(bound))
            } else if bound.is_finite() {
                k_o.max(bound.min(1.0))
            } else {
                1.0
            }
        }
    }
}

/// One filter decision: floor gain at the first iteration, the previous
/// gain when the step is below the convergence threshold (the estimate
/// would be numerical noise), the variant formula otherwise, and no filter
/// when the slope estimate reaches 1.
pub fn compute_adaptive_filter(
    state: &mut FilterState,
    ctx: &FilterContext,
    variant: FilterVariant,
) -> f64 {
    if ctx.k == 0 || ctx.u_prev.is_none() {
        state.gain = state.k_o;
        return state.gain;
    }
    let u_prev = ctx.u_prev.unwrap();
    let nabla = nabla_estimate(ctx.u_k, u_prev, ctx.u_star_next, ctx.u_star_prev);
    state.nabla_est = Some(nabla);
    if nabla.is_finite() {
        state.delta_est = state.delta_est.min(nabla);
    }
    let gain = if nabla < 1.0 && step_within_threshold(ctx.u_k, u_prev, &state.threshold) {
        state.gain
    } else {
        variant_gain(variant, nabla, state.delta_est, state.k_o)
    };
    state.gain = gain;
    gain
}
