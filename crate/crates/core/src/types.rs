use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::DVec;

/// Scalar-valued function of `(u, y)`, e.g. a cost function.
pub type ScalarMap = Arc<dyn Fn(&DVec, &DVec) -> f64 + Send + Sync>;
/// Vector-valued function of `(u, y)`, e.g. a constraint block.
pub type VectorMap = Arc<dyn Fn(&DVec, &DVec) -> DVec + Send + Sync>;
/// Model output map `f(u, theta)`.
pub type ModelMap = Arc<dyn Fn(&DVec, &DVec) -> DVec + Send + Sync>;

/// Axis-aligned input box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, CoreError> {
        CoreError::check_dim(lower.len(), upper.len(), "bounds lower/upper")?;
        for (lo, hi) in lower.iter().zip(&upper) {
            if lo > hi {
                return Err(CoreError::InvalidArgument(format!(
                    "empty box: lower {lo} > upper {hi}"
                )));
            }
        }
        Ok(Bounds { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, u: &DVec, tol: f64) -> bool {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(ui, (lo, hi))| *ui >= lo - tol && *ui <= hi + tol)
    }

    pub fn clamp(&self, u: &DVec) -> DVec {
        DVector::from_iterator(
            u.len(),
            u.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(ui, (lo, hi))| ui.max(*lo).min(*hi)),
        )
    }

    pub fn center(&self) -> DVec {
        DVector::from_iterator(
            self.dim(),
            self.lower.iter().zip(&self.upper).map(|(lo, hi)| 0.5 * (lo + hi)),
        )
    }

    pub fn widths(&self) -> DVec {
        DVector::from_iterator(
            self.dim(),
            self.lower.iter().zip(&self.upper).map(|(lo, hi)| hi - lo),
        )
    }

    /// Box extended by `frac` of its width on each side, for gradient probes
    /// around bound-adjacent points.
    pub fn extended(&self, frac: f64) -> Bounds {
        let w = self.widths();
        Bounds {
            lower: self
                .lower
                .iter()
                .enumerate()
                .map(|(i, lo)| lo - frac * w[i])
                .collect(),
            upper: self
                .upper
                .iter()
                .enumerate()
                .map(|(i, hi)| hi + frac * w[i])
                .collect(),
        }
    }
}

/// Everything the engineers hand over: nominal model, cost, constraints,
/// input box and problem dimensions. Immutable after construction and
/// shareable across threads.
#[derive(Clone)]
pub struct ProblemSpec {
    model: ModelMap,
    pub theta: DVec,
    pub cost: ScalarMap,
    pub constraints: VectorMap,
    pub bounds: Bounds,
    pub n_u: usize,
    pub n_y: usize,
    pub n_g: usize,
    pub n_d: usize,
}

impl ProblemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: ModelMap,
        theta: DVec,
        cost: ScalarMap,
        constraints: VectorMap,
        bounds: Bounds,
        n_u: usize,
        n_y: usize,
        n_g: usize,
        n_d: usize,
    ) -> Result<Self, CoreError> {
        CoreError::check_dim(n_u, bounds.dim(), "bounds vs n_u")?;
        let spec = ProblemSpec {
            model,
            theta,
            cost,
            constraints,
            bounds,
            n_u,
            n_y,
            n_g,
            n_d,
        };
        // Probe once at the box center so dimension errors surface at
        // construction rather than mid-run.
        let u0 = spec.bounds.center();
        let y0 = spec.model_output(&u0)?;
        CoreError::check_dim(n_y, y0.len(), "model output vs n_y")?;
        let g0 = (spec.constraints)(&u0, &y0);
        CoreError::check_dim(n_g, g0.len(), "constraints vs n_g")?;
        Ok(spec)
    }

    /// Nominal model output `f(u, theta_n)`.
    pub fn model_output(&self, u: &DVec) -> Result<DVec, CoreError> {
        let y = (self.model)(u, &self.theta);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite {
                at: u.iter().copied().collect(),
            });
        }
        Ok(y)
    }

    /// Model output for explicit parameter values.
    pub fn model_output_with(&self, u: &DVec, theta: &DVec) -> Result<DVec, CoreError> {
        let y = (self.model)(u, theta);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite {
                at: u.iter().copied().collect(),
            });
        }
        Ok(y)
    }

    /// Nominal composed cost `phi(u, f(u))`.
    pub fn nominal_cost(&self, u: &DVec) -> Result<f64, CoreError> {
        let y = self.model_output(u)?;
        let c = (self.cost)(u, &y);
        if !c.is_finite() {
            return Err(CoreError::NonFinite {
                at: u.iter().copied().collect(),
            });
        }
        Ok(c)
    }

    /// Nominal composed constraints `g(u, f(u))`.
    pub fn nominal_constraints(&self, u: &DVec) -> Result<DVec, CoreError> {
        let y = self.model_output(u)?;
        let g = (self.constraints)(u, &y);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite {
                at: u.iter().copied().collect(),
            });
        }
        Ok(g)
    }
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("n_u", &self.n_u)
            .field("n_y", &self.n_y)
            .field("n_g", &self.n_g)
            .field("n_d", &self.n_d)
            .field("bounds", &self.bounds)
            .finish()
    }
}

/// One steady-state observation returned by the plant interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub y: Vec<f64>,
    /// Ideal steady-state detector: always true at desk scale.
    pub ss_flag: bool,
}

/// Per-channel source of standard-normal draws. Implementations split a
/// scenario-level counter-based stream per output channel so replays are
/// bit-reproducible.
pub trait NoiseSource {
    fn standard_normal(&mut self, channel: usize) -> f64;
}

/// Zero-noise source used by the noise-free mathematical examples.
pub struct NoNoise;

impl NoiseSource for NoNoise {
    fn standard_normal(&mut self, _channel: usize) -> f64 {
        0.0
    }
}

/// Black-box steady-state plant: deterministic clean map plus a per-output
/// noise model.
pub trait Plant: Send + Sync {
    fn n_u(&self) -> usize;
    fn n_y(&self) -> usize;
    /// Dimension of the measured disturbance vector.
    fn n_d_measured(&self) -> usize;
    /// Dimension of the unmeasured disturbance vector.
    fn n_d_unmeasured(&self) -> usize;

    /// Noise standard deviation per output (zero for noise-free plants).
    fn noise_std(&self) -> DVec;

    /// De-noised steady-state outputs for the given inputs and disturbances.
    fn eval_clean(&self, u: &DVec, d_measured: &DVec, d_unmeasured: &DVec)
        -> Result<DVec, CoreError>;
}

/// The "reality" being optimized: wraps a plant and applies the additive
/// unbiased normal measurement noise per scalar output sample.
pub struct PlantInterface {
    pub plant: Arc<dyn Plant>,
}

impl PlantInterface {
    pub fn new(plant: Arc<dyn Plant>) -> Self {
        PlantInterface { plant }
    }

    /// One noisy steady-state sample. `noise` supplies the per-channel draws
    /// so the caller controls seeding and stream splitting.
    pub fn eval(
        &self,
        u: &DVec,
        d_measured: &DVec,
        d_unmeasured: &DVec,
        noise: &mut dyn NoiseSource,
    ) -> Result<Measurement, CoreError> {
        let clean = self.plant.eval_clean(u, d_measured, d_unmeasured)?;
        let std = self.plant.noise_std();
        CoreError::check_dim(clean.len(), std.len(), "noise std vs outputs")?;
        let y = clean
            .iter()
            .enumerate()
            .map(|(j, v)| v + std[j] * noise.standard_normal(j))
            .collect();
        Ok(Measurement { y, ss_flag: true })
    }

    /// Noise-free outputs (used by the theoretical drivers and oracles).
    pub fn eval_clean(
        &self,
        u: &DVec,
        d_measured: &DVec,
        d_unmeasured: &DVec,
    ) -> Result<DVec, CoreError> {
        self.plant.eval_clean(u, d_measured, d_unmeasured)
    }
}

/// One logged plant evaluation: input, measured disturbance, measured
/// outputs, timestamp, optional gradient estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub u: Vec<f64>,
    pub d_measured: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub timestamp: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gradients: Option<Vec<Vec<f64>>>,
}

impl EvaluationRecord {
    pub fn check_dims(&self, spec: &ProblemSpec) -> Result<(), CoreError> {
        CoreError::check_dim(spec.n_u, self.u.len(), "record u")?;
        CoreError::check_dim(spec.n_y, self.y_hat.len(), "record y_hat")?;
        Ok(())
    }
}
