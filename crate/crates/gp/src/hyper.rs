use nalgebra::{Cholesky, DMatrix, DVector};
use rto_core::{types::Bounds, DVec};

use crate::kernel::{kernel, KernelKind, SeArd};

/// Log marginal likelihood of zero-mean residuals under an SE-ARD kernel
/// plus a small white-noise floor.
fn log_marginal(se: &SeArd, xs: &[DVec], resid: &DVec, noise: f64) -> f64 {
    let n = xs.len();
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            c[(i, j)] = kernel(se, &xs[i], &xs[j], KernelKind::Ff, None, None);
        }
        c[(i, i)] += noise;
    }
    match Cholesky::new(c) {
        Some(ch) => {
            let alpha = ch.solve(resid);
            let log_det: f64 = ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
            -0.5 * resid.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
        }
        None => f64::NEG_INFINITY,
    }
}

/// Desk-scale stand-in for full model selection: reconstruct the model with
/// a GP by maximizing the marginal likelihood of model samples over a grid
/// of 25 log-spaced length scales per axis. Axes are swept cyclically from
/// the box-width midpoint, which matches the full grid on the separable
/// benchmarks while staying cheap in higher dimensions.
pub fn derive_lengthscales<F>(model: F, bounds: &Bounds, samples_per_axis: usize) -> DVec
where
    F: Fn(&DVec) -> f64,
{
    let n = bounds.dim();
    let total = samples_per_axis.max(4).pow(n as u32).min(256);
    // Low-discrepancy-ish lattice over the box.
    let mut xs: Vec<DVec> = Vec::with_capacity(total);
    for k in 0..total {
        let mut x = DVector::zeros(n);
        for i in 0..n {
            let phi = ((k as f64 + 0.5) * (i as f64 * 0.381966011 + 0.618033988)).fract();
            x[i] = bounds.lower[i] + phi * (bounds.upper[i] - bounds.lower[i]);
        }
        xs.push(x);
    }
    let values: Vec<f64> = xs.iter().map(|x| model(x)).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let resid = DVector::from_iterator(values.len(), values.iter().map(|v| v - mean));
    let var = (resid.dot(&resid) / values.len() as f64).max(1e-12);
    let noise = 1e-8 * var;

    let widths = bounds.widths();
    let grid: Vec<f64> = (0..25)
        .map(|g| 10.0_f64.powf(-1.5 + 3.0 * g as f64 / 24.0))
        .collect();
    let mut ls = DVector::from_iterator(n, widths.iter().map(|w| 0.5 * w));
    for _pass in 0..2 {
        for axis in 0..n {
            let mut best = (f64::NEG_INFINITY, ls[axis]);
            for g in &grid {
                let mut cand = ls.clone();
                cand[axis] = g * widths[axis];
                let se = SeArd::new(var, cand);
                let lml = log_marginal(&se, &xs, &resid, noise);
                if lml > best.0 {
                    best = (lml, g * widths[axis]);
                }
            }
            ls[axis] = best.1;
        }
    }
    ls
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_axis_gets_longer_lengthscale() {
        // Fast variation along axis 0, slow along axis 1.
        let bounds = Bounds::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let model = |x: &DVec| (12.0 * x[0]).sin() + 0.1 * x[1];
        let ls = derive_lengthscales(model, &bounds, 12);
        assert!(
            ls[0] < ls[1],
            "wiggly axis should get the shorter length scale: {ls:?}"
        );
    }
}
