use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rto_core::{DMat, DVec};
use thiserror::Error;

use crate::dataset::{GpDataset, GpDatum, GpPrior, Observation};
use crate::kernel::{kernel, KernelKind};

#[derive(Debug, Error)]
pub enum GpError {
    #[error("covariance factorization failed even with jitter {max_jitter}")]
    Conditioning { max_jitter: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Factorized posterior snapshot: immutable, prediction is read-only.
pub struct GpPosterior {
    pub prior: GpPrior,
    data: GpDataset,
    chol: Option<Cholesky<f64, Dyn>>,
    /// `C^-1 (y_p - y)` precomputed for mean predictions.
    alpha: DVec,
    pub jitter_used: f64,
}

fn row_cov(prior: &GpPrior, a: &GpDatum, b: &GpDatum) -> f64 {
    let se = &prior.kernel;
    match (&a.obs, &b.obs) {
        (Observation::Value, Observation::Value) => {
            kernel(se, &a.x, &b.x, KernelKind::Ff, None, None)
        }
        (Observation::Value, Observation::Derivative { direction }) => {
            kernel(se, &a.x, &b.x, KernelKind::Ff1, None, Some(direction))
        }
        (Observation::Derivative { direction }, Observation::Value) => {
            kernel(se, &a.x, &b.x, KernelKind::F1f, Some(direction), None)
        }
        (
            Observation::Derivative { direction: vi },
            Observation::Derivative { direction: vj },
        ) => kernel(se, &a.x, &b.x, KernelKind::F1f1, Some(vi), Some(vj)),
    }
}

fn prior_mean_of(prior: &GpPrior, d: &GpDatum) -> f64 {
    match &d.obs {
        Observation::Value => prior.mean_value(&d.x),
        Observation::Derivative { direction } => {
            prior.mean_directional_derivative(&d.x, direction)
        }
    }
}

impl GpPosterior {
    /// Build the factorized posterior. Jitter escalates from 1e-12 to 1e-6
    /// (times the mean diagonal) before giving up.
    pub fn fit(prior: GpPrior, data: GpDataset) -> Result<Self, GpError> {
        let n = data.len();
        for d in data.rows() {
            if d.x.len() != prior.dim() {
                return Err(GpError::Dimension(format!(
                    "datum dim {} vs prior dim {}",
                    d.x.len(),
                    prior.dim()
                )));
            }
        }
        if n == 0 {
            return Ok(GpPosterior {
                prior,
                data,
                chol: None,
                alpha: DVector::zeros(0),
                jitter_used: 0.0,
            });
        }
        let mut c = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                c[(i, j)] = row_cov(&prior, &data.rows()[i], &data.rows()[j]);
            }
            c[(i, i)] += data.rows()[i].noise_var;
        }
        // Symmetrize round-off.
        c = 0.5 * (&c + c.transpose());
        let diag_scale = (c.diagonal().sum() / n as f64).max(1e-300);
        let mut jitter = 0.0_f64;
        let mut level = 1e-12;
        let chol = loop {
            let attempt = Cholesky::new(&c + DMatrix::identity(n, n) * (jitter * diag_scale));
            match attempt {
                Some(ch) => break ch,
                None => {
                    if level > 1e-6 {
                        return Err(GpError::Conditioning { max_jitter: 1e-6 });
                    }
                    jitter = level;
                    level *= 10.0;
                }
            }
        };
        let resid = DVector::from_iterator(
            n,
            data.rows().iter().map(|d| d.value - prior_mean_of(&prior, d)),
        );
        let alpha = chol.solve(&resid);
        Ok(GpPosterior {
            prior,
            data,
            chol: Some(chol),
            alpha,
            jitter_used: jitter * diag_scale,
        })
    }

    /// Refit with a forced diagonal jitter (conditioning experiments).
    pub fn fit_with_jitter(prior: GpPrior, data: GpDataset, jitter: f64) -> Result<Self, GpError> {
        let n = data.len();
        if n == 0 {
            return Self::fit(prior, data);
        }
        let mut c = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                c[(i, j)] = row_cov(&prior, &data.rows()[i], &data.rows()[j]);
            }
            c[(i, i)] += data.rows()[i].noise_var + jitter;
        }
        c = 0.5 * (&c + c.transpose());
        let chol = Cholesky::new(c).ok_or(GpError::Conditioning { max_jitter: jitter })?;
        let resid = DVector::from_iterator(
            n,
            data.rows().iter().map(|d| d.value - prior_mean_of(&prior, d)),
        );
        let alpha = chol.solve(&resid);
        Ok(GpPosterior {
            prior,
            data,
            chol: Some(chol),
            alpha,
            jitter_used: jitter,
        })
    }

    pub fn data(&self) -> &GpDataset {
        &self.data
    }

    fn cross_vector(&self, target: &GpDatum) -> DVec {
        DVector::from_iterator(
            self.data.len(),
            self.data
                .rows()
                .iter()
                .map(|d| row_cov(&self.prior, target, d)),
        )
    }

    /// Posterior mean and variance of the value at `x`. The variance is
    /// clamped at zero after round-off.
    pub fn predict(&self, x: &DVec) -> (f64, f64) {
        let target = GpDatum {
            x: x.clone(),
            obs: Observation::Value,
            value: 0.0,
            noise_var: 0.0,
        };
        let prior_mean = self.prior.mean_value(x);
        let prior_var = self.prior.kernel.sigma_f2;
        match &self.chol {
            None => (prior_mean, prior_var),
            Some(ch) => {
                let c_star = self.cross_vector(&target);
                let mean = prior_mean + c_star.dot(&self.alpha);
                let v = prior_var - c_star.dot(&ch.solve(&c_star));
                (mean, v.max(0.0))
            }
        }
    }

    /// Joint posterior of `[value; gradient]` at `x`: mean vector of length
    /// `1 + n_x` and the full covariance (value variance, value-gradient
    /// covariance, gradient covariance blocks).
    pub fn predict_value_and_gradient(&self, x: &DVec) -> (DVec, DMat) {
        let nx = self.prior.dim();
        let se = &self.prior.kernel;
        // Targets: value at x, then directional derivatives along each axis.
        let mut targets: Vec<GpDatum> = Vec::with_capacity(1 + nx);
        targets.push(GpDatum {
            x: x.clone(),
            obs: Observation::Value,
            value: 0.0,
            noise_var: 0.0,
        });
        for i in 0..nx {
            let mut e = DVector::zeros(nx);
            e[i] = 1.0;
            targets.push(GpDatum {
                x: x.clone(),
                obs: Observation::Derivative { direction: e },
                value: 0.0,
                noise_var: 0.0,
            });
        }
        // Prior joint mean and covariance.
        let mut mean = DVector::zeros(1 + nx);
        mean[0] = self.prior.mean_value(x);
        let grad = self.prior.mean_gradient(x);
        for i in 0..nx {
            mean[1 + i] = grad[i];
        }
        let mut c_ss = DMatrix::zeros(1 + nx, 1 + nx);
        for a in 0..(1 + nx) {
            for b in 0..(1 + nx) {
                c_ss[(a, b)] = row_cov(&self.prior, &targets[a], &targets[b]);
            }
        }
        let _ = se;
        match &self.chol {
            None => (mean, c_ss),
            Some(ch) => {
                let n = self.data.len();
                let mut c_star = DMatrix::zeros(n, 1 + nx);
                for (t, target) in targets.iter().enumerate() {
                    let col = self.cross_vector(target);
                    c_star.column_mut(t).copy_from(&col);
                }
                let mean_adj = c_star.transpose() * &self.alpha;
                let solved = ch.solve(&c_star);
                let cov = &c_ss - c_star.transpose() * solved;
                ((mean + mean_adj).column(0).into_owned(), cov)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn prior() -> GpPrior {
        GpPrior::new(
            Arc::new(|x: &DVec| x[0] * x[0] / 4.0),
            1.0,
            DVector::from_vec(vec![1.0]),
        )
    }

    #[test]
    fn empty_dataset_recovers_prior() {
        let post = GpPosterior::fit(prior(), GpDataset::new()).unwrap();
        let x = DVector::from_vec(vec![2.0]);
        let (m, v) = post.predict(&x);
        assert_relative_eq!(m, 1.0, epsilon = 1e-14);
        assert_relative_eq!(v, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn noise_free_point_is_interpolated() {
        let mut data = GpDataset::new();
        data.push_value(DVector::from_vec(vec![0.5]), 2.0, 0.0);
        let post = GpPosterior::fit(prior(), data).unwrap();
        let (m, v) = post.predict(&DVector::from_vec(vec![0.5]));
        assert_relative_eq!(m, 2.0, epsilon = 1e-8);
        assert!(v <= 1e-10 * 1.0, "variance at the datum is {v}");
    }

    #[test]
    fn noise_increases_variance_monotonically() {
        let x = DVector::from_vec(vec![0.5]);
        let mut prev = -1.0;
        for nv in [0.0, 0.01, 0.1, 1.0] {
            let mut data = GpDataset::new();
            data.push_value(x.clone(), 2.0, nv);
            let post = GpPosterior::fit(prior(), data).unwrap();
            let (_, v) = post.predict(&x);
            assert!(v > prev, "variance should grow with noise");
            prev = v;
        }
    }

    #[test]
    fn joint_prediction_first_component_matches_predict() {
        let mut data = GpDataset::new();
        data.push_value(DVector::from_vec(vec![0.3]), 1.2, 0.01);
        data.push_value(DVector::from_vec(vec![0.9]), 0.7, 0.01);
        let post = GpPosterior::fit(prior(), data).unwrap();
        let x = DVector::from_vec(vec![0.6]);
        let (m, v) = post.predict(&x);
        let (jm, jc) = post.predict_value_and_gradient(&x);
        assert_relative_eq!(jm[0], m, epsilon = 1e-12);
        assert_relative_eq!(jc[(0, 0)], v, epsilon = 1e-12);
    }

    #[test]
    fn empty_dataset_gradient_prior() {
        let post = GpPosterior::fit(prior(), GpDataset::new()).unwrap();
        let x = DVector::from_vec(vec![2.0]);
        let (jm, jc) = post.predict_value_and_gradient(&x);
        // Mean gradient of the prior mean is x/2 = 1, variance sigma_f^2/l^2.
        assert_relative_eq!(jm[1], 1.0, epsilon = 1e-5);
        assert_relative_eq!(jc[(1, 1)], 1.0, epsilon = 1e-12);
        // Cross covariance vanishes at zero distance.
        assert_relative_eq!(jc[(0, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn joint_covariance_is_psd() {
        let mut data = GpDataset::new();
        data.push_value(DVector::from_vec(vec![0.3]), 1.2, 0.01);
        data.push_derivative(
            DVector::from_vec(vec![0.8]),
            DVector::from_vec(vec![1.0]),
            -0.4,
            0.02,
        );
        let post = GpPosterior::fit(prior(), data).unwrap();
        let (_, jc) = post.predict_value_and_gradient(&DVector::from_vec(vec![0.5]));
        let min_eig = rto_core::min_eigenvalue(&jc);
        assert!(min_eig >= -1e-10, "joint covariance eigenvalue {min_eig}");
    }
}
