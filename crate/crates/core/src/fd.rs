use nalgebra::{DMatrix, DVector};

use crate::error::CoreError;
use crate::{DMat, DVec};

/// Default relative step: `1e-6 * max(1, |u_i|)` per coordinate, balancing
/// truncation against round-off on O(1)-scaled benchmarks.
pub fn default_fd_step(u: &DVec) -> DVec {
    DVector::from_iterator(u.len(), u.iter().map(|ui| 1e-6 * ui.abs().max(1.0)))
}

fn eval_checked<F>(f: &F, u: &DVec) -> Result<f64, CoreError>
where
    F: Fn(&DVec) -> f64,
{
    let v = f(u);
    if !v.is_finite() {
        return Err(CoreError::NonFinite {
            at: u.iter().copied().collect(),
        });
    }
    Ok(v)
}

/// Central-difference gradient with per-coordinate steps. Truncation error
/// is O(h^2).
pub fn finite_diff_gradient<F>(f: F, u: &DVec, h: &DVec) -> Result<DVec, CoreError>
where
    F: Fn(&DVec) -> f64,
{
    CoreError::check_dim(u.len(), h.len(), "fd step vs u")?;
    if h.iter().any(|hi| *hi <= 0.0) {
        return Err(CoreError::InvalidArgument("fd step must be > 0".into()));
    }
    let mut g = DVector::zeros(u.len());
    let mut up = u.clone();
    let mut um = u.clone();
    for i in 0..u.len() {
        up[i] = u[i] + h[i];
        um[i] = u[i] - h[i];
        g[i] = (eval_checked(&f, &up)? - eval_checked(&f, &um)?) / (2.0 * h[i]);
        up[i] = u[i];
        um[i] = u[i];
    }
    Ok(g)
}

/// Central-difference Jacobian of a vector map, rows = outputs.
pub fn finite_diff_jacobian<F>(f: F, u: &DVec, h: &DVec, n_out: usize) -> Result<DMat, CoreError>
where
    F: Fn(&DVec) -> DVec,
{
    CoreError::check_dim(u.len(), h.len(), "fd step vs u")?;
    let mut jac = DMatrix::zeros(n_out, u.len());
    let mut up = u.clone();
    let mut um = u.clone();
    for i in 0..u.len() {
        up[i] = u[i] + h[i];
        um[i] = u[i] - h[i];
        let fp = f(&up);
        let fm = f(&um);
        CoreError::check_dim(n_out, fp.len(), "fd jacobian output")?;
        for r in 0..n_out {
            let v = (fp[r] - fm[r]) / (2.0 * h[i]);
            if !v.is_finite() {
                return Err(CoreError::NonFinite {
                    at: u.iter().copied().collect(),
                });
            }
            jac[(r, i)] = v;
        }
        up[i] = u[i];
        um[i] = u[i];
    }
    Ok(jac)
}

/// Central-difference Hessian (symmetrized). Uses a step `sqrt`-scaled from
/// the gradient step since second differences lose more precision.
pub fn finite_diff_hessian<F>(f: F, u: &DVec, h: &DVec) -> Result<DMat, CoreError>
where
    F: Fn(&DVec) -> f64,
{
    CoreError::check_dim(u.len(), h.len(), "fd step vs u")?;
    let n = u.len();
    // Wider step for second differences.
    let hh: Vec<f64> = h.iter().map(|hi| hi.sqrt() * 1e-1).collect();
    let f0 = eval_checked(&f, u)?;
    let mut hess = DMatrix::zeros(n, n);
    let mut x = u.clone();
    for i in 0..n {
        x[i] = u[i] + hh[i];
        let fp = eval_checked(&f, &x)?;
        x[i] = u[i] - hh[i];
        let fm = eval_checked(&f, &x)?;
        x[i] = u[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (hh[i] * hh[i]);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            x[i] = u[i] + hh[i];
            x[j] = u[j] + hh[j];
            let fpp = eval_checked(&f, &x)?;
            x[j] = u[j] - hh[j];
            let fpm = eval_checked(&f, &x)?;
            x[i] = u[i] - hh[i];
            x[j] = u[j] + hh[j];
            let fmp = eval_checked(&f, &x)?;
            x[j] = u[j] - hh[j];
            let fmm = eval_checked(&f, &x)?;
            x[i] = u[i];
            x[j] = u[j];
            let v = (fpp - fpm - fmp + fmm) / (4.0 * hh[i] * hh[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}
