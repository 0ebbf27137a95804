use nalgebra::DVector;
use rto_core::{DMat, DVec};

use crate::dataset::GpPrior;

/// Probable (96.6%) elementwise upper bound on the plant gradient:
/// `b(x) = |grad f(x)| + (3/sqrt(2)) sigma_f / l_i`.
pub fn gradient_upper_bound(prior: &GpPrior, x: &DVec) -> DVec {
    let g = prior.mean_gradient(x);
    let sf = prior.kernel.sigma_f2.sqrt();
    let c = 3.0 / 2.0_f64.sqrt();
    DVector::from_iterator(
        prior.dim(),
        g.iter()
            .enumerate()
            .map(|(i, gi)| gi.abs() + c * sf / prior.kernel.lengthscales[i]),
    )
}

/// Effective measurement variance when the inputs themselves are uncertain:
/// `sigma_xy^2 = b(x)' Sigma_x b(x) + sigma_y^2`, with the a-priori gradient
/// bound standing in for the unknown plant gradient.
pub fn measurement_variance(prior: &GpPrior, x_hat: &DVec, sigma_x: &DMat, sigma_y2: f64) -> f64 {
    if sigma_x.amax() == 0.0 {
        return sigma_y2;
    }
    let b = gradient_upper_bound(prior, x_hat);
    (b.transpose() * sigma_x * &b)[(0, 0)] + sigma_y2
}

/// Factor of the quasi-affine relative error bound:
/// `error% <= 100 * (3 sqrt(3 pi) / 4) * (a / l_v)^2`.
pub fn quasi_affine_factor() -> f64 {
    100.0 * 3.0 * (3.0 * std::f64::consts::PI).sqrt() / 4.0
}

/// Relative linearization error bound (percent) at distance `a` along a
/// direction with length scale `l_v`.
pub fn quasi_affine_rel_error_pct(a: f64, l_v: f64) -> f64 {
    quasi_affine_factor() * (a / l_v) * (a / l_v)
}

/// Invert the bound: the half-width along `direction` keeping the relative
/// linearization error below `target_error_pct`.
pub fn quasi_affine_halfwidth(prior: &GpPrior, direction: &DVec, target_error_pct: f64) -> f64 {
    assert!(target_error_pct > 0.0);
    let unit = direction / direction.norm();
    let inv_len2 = prior.kernel.directional_inv_len2(&unit);
    let l_v = 1.0 / inv_len2.sqrt();
    l_v * (target_error_pct / quasi_affine_factor()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn flat_prior(sigma_f2: f64, l: f64) -> GpPrior {
        GpPrior::new(
            Arc::new(|_x: &DVec| 0.0),
            sigma_f2,
            DVector::from_vec(vec![l]),
        )
    }

    #[test]
    fn zero_gradient_bound_is_three_over_sqrt_two() {
        let prior = flat_prior(1.0, 1.0);
        let b = gradient_upper_bound(&prior, &DVector::from_vec(vec![0.3]));
        assert_relative_eq!(b[0], 3.0 / 2.0_f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn infinite_lengthscale_recovers_model_gradient() {
        let prior = GpPrior::new(
            Arc::new(|x: &DVec| 2.0 * x[0]),
            1.0,
            DVector::from_vec(vec![1e12]),
        );
        let b = gradient_upper_bound(&prior, &DVector::from_vec(vec![0.0]));
        assert_relative_eq!(b[0], 2.0, epsilon = 1e-6);
    }

    #[test]
    fn zero_input_covariance_returns_output_variance() {
        let prior = flat_prior(1.0, 1.0);
        let s = measurement_variance(
            &prior,
            &DVector::from_vec(vec![0.0]),
            &nalgebra::DMatrix::zeros(1, 1),
            0.05,
        );
        assert_eq!(s, 0.05);
    }

    #[test]
    fn scalar_measurement_variance_direct_substitution() {
        // b = 2, Sigma_x = 0.01, sigma_y^2 = 0.05 -> 0.09
        // Build a prior whose bound at x = 0 is exactly 2: model gradient 2,
        // infinite length scale kills the kernel term.
        let prior = GpPrior::new(
            Arc::new(|x: &DVec| 2.0 * x[0]),
            1e-30,
            DVector::from_vec(vec![1.0]),
        );
        let s = measurement_variance(
            &prior,
            &DVector::from_vec(vec![0.0]),
            &nalgebra::DMatrix::from_element(1, 1, 0.01),
            0.05,
        );
        assert_relative_eq!(s, 0.09, epsilon = 1e-6);
    }

    #[test]
    fn error_table_values() {
        // a = l/2 -> 57.6 %, l/4 -> 14.4 %, l/8 -> 3.6 % (within 0.1);
        // the l/6 formula value is 6.4.
        assert!((quasi_affine_rel_error_pct(0.5, 1.0) - 57.6).abs() < 0.1);
        assert!((quasi_affine_rel_error_pct(0.25, 1.0) - 14.4).abs() < 0.1);
        assert!((quasi_affine_rel_error_pct(1.0 / 8.0, 1.0) - 3.6).abs() < 0.1);
        assert!((quasi_affine_rel_error_pct(1.0 / 6.0, 1.0) - 6.4).abs() < 0.1);
    }

    #[test]
    fn halfwidth_inverts_the_bound() {
        let prior = flat_prior(1.0, 2.0);
        let dir = DVector::from_vec(vec![1.0]);
        let a = quasi_affine_halfwidth(&prior, &dir, 14.4);
        assert_relative_eq!(quasi_affine_rel_error_pct(a, 2.0), 14.4, epsilon = 1e-9);
    }
}
