use std::sync::Arc;

use nalgebra::DVector;
use rto_core::{default_fd_step, DVec};

use crate::kernel::SeArd;

/// Prior over the plant function: the engineering model as mean plus an
/// SE-ARD covariance whose variance comes from the declared model-error
/// bound.
#[derive(Clone)]
pub struct GpPrior {
    pub mean: Arc<dyn Fn(&DVec) -> f64 + Send + Sync>,
    pub kernel: SeArd,
    /// Declared bound on |f_p - f| (when the prior was derived from one).
    pub delta_y: Option<f64>,
}

impl GpPrior {
    pub fn new(
        mean: Arc<dyn Fn(&DVec) -> f64 + Send + Sync>,
        sigma_f2: f64,
        lengthscales: DVec,
    ) -> Self {
        GpPrior {
            mean,
            kernel: SeArd::new(sigma_f2, lengthscales),
            delta_y: None,
        }
    }

    /// Derive the prior variance from the model-error bound:
    /// `sigma_f^2 = (delta_y / 2)^2`.
    pub fn from_error_bound(
        mean: Arc<dyn Fn(&DVec) -> f64 + Send + Sync>,
        delta_y: f64,
        lengthscales: DVec,
    ) -> Self {
        let sigma_f2 = (delta_y / 2.0) * (delta_y / 2.0);
        GpPrior {
            mean,
            kernel: SeArd::new(sigma_f2, lengthscales),
            delta_y: Some(delta_y),
        }
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn mean_value(&self, x: &DVec) -> f64 {
        (self.mean)(x)
    }

    /// Directional derivative of the mean along a unit direction (central
    /// differences on the model).
    pub fn mean_directional_derivative(&self, x: &DVec, v: &DVec) -> f64 {
        let h = default_fd_step(x).amax();
        let xp = x + v * h;
        let xm = x - v * h;
        ((self.mean)(&xp) - (self.mean)(&xm)) / (2.0 * h)
    }

    /// Full gradient of the mean (central differences).
    pub fn mean_gradient(&self, x: &DVec) -> DVec {
        let h = default_fd_step(x);
        let mut g = DVector::zeros(x.len());
        let mut xp = x.clone();
        let mut xm = x.clone();
        for i in 0..x.len() {
            xp[i] = x[i] + h[i];
            xm[i] = x[i] - h[i];
            g[i] = ((self.mean)(&xp) - (self.mean)(&xm)) / (2.0 * h[i]);
            xp[i] = x[i];
            xm[i] = x[i];
        }
        g
    }
}

impl std::fmt::Debug for GpPrior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GpPrior")
            .field("kernel", &self.kernel)
            .field("delta_y", &self.delta_y)
            .finish()
    }
}

/// Row type: plain value or directional derivative along a unit direction.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Value,
    Derivative { direction: DVec },
}

/// One observation row.
#[derive(Debug, Clone, PartialEq)]
pub struct GpDatum {
    pub x: DVec,
    pub obs: Observation,
    pub value: f64,
    pub noise_var: f64,
}

/// Mixed dataset of values and directional derivatives. Derivative
/// directions are normalized to unit 2-norm at ingestion.
#[derive(Debug, Clone, Default)]
pub struct GpDataset {
    rows: Vec<GpDatum>,
}

impl GpDataset {
    pub fn new() -> Self {
        GpDataset { rows: vec![] }
    }

    pub fn push_value(&mut self, x: DVec, value: f64, noise_var: f64) {
        assert!(noise_var >= 0.0, "noise variance must be nonnegative");
        self.rows.push(GpDatum {
            x,
            obs: Observation::Value,
            value,
            noise_var,
        });
    }

    /// Push a directional-derivative observation; the direction is
    /// normalized and the observed slope rescaled accordingly.
    pub fn push_derivative(&mut self, x: DVec, direction: DVec, slope: f64, noise_var: f64) {
        assert!(noise_var >= 0.0, "noise variance must be nonnegative");
        let nrm = direction.norm();
        assert!(nrm > 0.0, "derivative direction must be nonzero");
        let unit = &direction / nrm;
        self.rows.push(GpDatum {
            x,
            obs: Observation::Derivative { direction: unit },
            // d_w f = w' grad f, so the unit-direction slope is scaled down.
            value: slope / nrm,
            noise_var,
        });
    }

    pub fn rows(&self) -> &[GpDatum] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_directions_are_normalized() {
        let mut d = GpDataset::new();
        d.push_derivative(
            DVector::from_vec(vec![0.0]),
            DVector::from_vec(vec![2.0]),
            3.0,
            0.0,
        );
        match &d.rows()[0].obs {
            Observation::Derivative { direction } => {
                assert!((direction.norm() - 1.0).abs() < 1e-15)
            }
            _ => panic!("expected derivative row"),
        }
    }
}
