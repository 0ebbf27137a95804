use serde::{Deserialize, Serialize};

/// One step of a piecewise-constant disturbance timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// Time (hours) from which `value` applies.
    pub at: f64,
    pub value: f64,
}

/// Piecewise-constant timelines for the measured and unmeasured
/// disturbance channels.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DisturbanceScript {
    /// Baselines used before the first step of each channel.
    pub measured_baseline: Vec<f64>,
    pub unmeasured_baseline: Vec<f64>,
    /// Per-channel step lists (sorted by time at construction).
    pub measured_steps: Vec<Vec<Step>>,
    pub unmeasured_steps: Vec<Vec<Step>>,
}

impl DisturbanceScript {
    pub fn constant(measured: Vec<f64>, unmeasured: Vec<f64>) -> Self {
        let m = measured.len();
        let u = unmeasured.len();
        DisturbanceScript {
            measured_baseline: measured,
            unmeasured_baseline: unmeasured,
            measured_steps: vec![vec![]; m],
            unmeasured_steps: vec![vec![]; u],
        }
    }

    pub fn sort(&mut self) {
        for s in self.measured_steps.iter_mut().chain(self.unmeasured_steps.iter_mut()) {
            s.sort_by(|a, b| a.at.partial_cmp(&b.at).unwrap());
        }
    }

    fn value_at(baseline: f64, steps: &[Step], t: f64) -> f64 {
        let mut v = baseline;
        for s in steps {
            if s.at <= t {
                v = s.value;
            } else {
                break;
            }
        }
        v
    }

    pub fn measured_at(&self, t: f64) -> Vec<f64> {
        self.measured_baseline
            .iter()
            .zip(&self.measured_steps)
            .map(|(b, s)| Self::value_at(*b, s, t))
            .collect()
    }

    pub fn unmeasured_at(&self, t: f64) -> Vec<f64> {
        self.unmeasured_baseline
            .iter()
            .zip(&self.unmeasured_steps)
            .map(|(b, s)| Self::value_at(*b, s, t))
            .collect()
    }
}
