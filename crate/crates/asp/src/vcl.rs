use nalgebra::DMatrix;
use rto_core::{DMat, DVec};

use crate::error::AspError;

/// Precomputed affine feedback law compensating small measured-disturbance
/// moves between decisions: `u(dd') = u* + G* dd'` on the frozen active
/// set, valid inside the declared disturbance box.
#[derive(Debug, Clone)]
pub struct VclLaw {
    pub anchor_u: DVec,
    pub anchor_d: DVec,
    pub gain: DMat,
    pub active_set: Vec<usize>,
    pub validity_halfwidth: DVec,
}

impl VclLaw {
    /// Law output at the measured disturbance (no clamping; callers clamp
    /// to the input box).
    pub fn input_for(&self, d_meas: &DVec) -> DVec {
        &self.anchor_u + &self.gain * (d_meas - &self.anchor_d)
    }

    pub fn within_validity(&self, d_meas: &DVec) -> bool {
        (d_meas - &self.anchor_d)
            .iter()
            .zip(self.validity_halfwidth.iter())
            .all(|(d, w)| d.abs() <= *w)
    }
}

fn second_derivative_matrix<F>(f: &F, a: &DVec, b: &DVec, scale: f64) -> DMat
where
    F: Fn(&DVec, &DVec) -> f64,
{
    // d^2 f / (da db') by central differences, step 1e-5 scaled.
    let (na, nb) = (a.len(), b.len());
    let mut m = DMatrix::zeros(na, nb);
    for i in 0..na {
        for j in 0..nb {
            let ha = scale * a[i].abs().max(1.0);
            let hb = scale * b[j].abs().max(1.0);
            let mut app = a.clone();
            let mut amm = a.clone();
            app[i] += ha;
            amm[i] -= ha;
            let mut bpp = b.clone();
            let mut bmm = b.clone();
            bpp[j] += hb;
            bmm[j] -= hb;
            m[(i, j)] = (f(&app, &bpp) - f(&app, &bmm) - f(&amm, &bpp) + f(&amm, &bmm))
                / (4.0 * ha * hb);
        }
    }
    m
}

/// Build the feedback law from the updated-model cost and the active
/// constraint rows: invert the KKT block matrix of the anchored quadratic
/// approximation and read the disturbance-gain block.
pub fn build_vcl(
    cost: &(dyn Fn(&DVec, &DVec) -> f64 + Sync),
    active_rows: &(dyn Fn(&DVec, &DVec) -> DVec + Sync),
    n_active: usize,
    u_star: &DVec,
    d_hat: &DVec,
    validity_halfwidth: &DVec,
    active_set: Vec<usize>,
) -> Result<VclLaw, AspError> {
    let n_u = u_star.len();
    let n_d = d_hat.len();
    let scale = 1e-5;

    // Hessian of the cost in u.
    let q = {
        let mut m = DMatrix::zeros(n_u, n_u);
        let f0 = cost(u_star, d_hat);
        for i in 0..n_u {
            let hi = scale * u_star[i].abs().max(1.0);
            for j in 0..n_u {
                if i == j {
                    let mut up = u_star.clone();
                    up[i] += hi;
                    let mut um = u_star.clone();
                    um[i] -= hi;
                    m[(i, i)] = (cost(&up, d_hat) - 2.0 * f0 + cost(&um, d_hat)) / (hi * hi);
                } else if j > i {
                    let hj = scale * u_star[j].abs().max(1.0);
                    let mut upp = u_star.clone();
                    upp[i] += hi;
                    upp[j] += hj;
                    let mut upm = u_star.clone();
                    upm[i] += hi;
                    upm[j] -= hj;
                    let mut ump = u_star.clone();
                    ump[i] -= hi;
                    ump[j] += hj;
                    let mut umm = u_star.clone();
                    umm[i] -= hi;
                    umm[j] -= hj;
                    let v = (cost(&upp, d_hat) - cost(&upm, d_hat) - cost(&ump, d_hat)
                        + cost(&umm, d_hat))
                        / (4.0 * hi * hj);
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
        }
        m
    };
    // Cross derivatives of the cost and of the active rows.
    let cross_cost = second_derivative_matrix(&|u: &DVec, d: &DVec| cost(u, d), u_star, d_hat, scale);
    let grad_u_h = {
        let mut m = DMatrix::zeros(n_active, n_u);
        for c in 0..n_u {
            let h = scale * u_star[c].abs().max(1.0);
            let mut up = u_star.clone();
            up[c] += h;
            let mut um = u_star.clone();
            um[c] -= h;
            let rp = active_rows(&up, d_hat);
            let rm = active_rows(&um, d_hat);
            for r in 0..n_active {
                m[(r, c)] = (rp[r] - rm[r]) / (2.0 * h);
            }
        }
        m
    };
    let grad_d_h = {
        let mut m = DMatrix::zeros(n_active, n_d);
        for c in 0..n_d {
            let h = scale * d_hat[c].abs().max(1.0);
            let mut dp = d_hat.clone();
            dp[c] += h;
            let mut dm = d_hat.clone();
            dm[c] -= h;
            let rp = active_rows(u_star, &dp);
            let rm = active_rows(u_star, &dm);
            for r in 0..n_active {
                m[(r, c)] = (rp[r] - rm[r]) / (2.0 * h);
            }
        }
        m
    };

    // KKT block matrix of the anchored quadratic program.
    let dim = n_u + n_active;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n_u, n_u)).copy_from(&q);
    if n_active > 0 {
        kkt.view_mut((0, n_u), (n_u, n_active))
            .copy_from(&grad_u_h.transpose());
        kkt.view_mut((n_u, 0), (n_active, n_u)).copy_from(&grad_u_h);
    }
    let inv = kkt
        .clone()
        .try_inverse()
        .ok_or_else(|| AspError::DegenerateLaw("singular KKT block matrix".into()))?;
    let psi_11 = inv.view((0, 0), (n_u, n_u)).into_owned();
    let gain = if n_active > 0 {
        let psi_12 = inv.view((0, n_u), (n_u, n_active)).into_owned();
        -(&psi_11 * &cross_cost) - psi_12 * grad_d_h
    } else {
        -(&psi_11 * &cross_cost)
    };
    if gain.iter().any(|v| !v.is_finite()) {
        return Err(AspError::DegenerateLaw("non-finite gain".into()));
    }
    Ok(VclLaw {
        anchor_u: u_star.clone(),
        anchor_d: d_hat.clone(),
        gain,
        active_set,
        validity_halfwidth: validity_halfwidth.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn disturbance_free_cost_gives_zero_gain() {
        let cost = |u: &DVec, _d: &DVec| (u[0] - 1.0) * (u[0] - 1.0);
        let rows = |_u: &DVec, _d: &DVec| DVector::zeros(0);
        let law = build_vcl(
            &cost,
            &rows,
            0,
            &DVector::from_vec(vec![1.0]),
            &DVector::from_vec(vec![0.0]),
            &DVector::from_vec(vec![1.0]),
            vec![],
        )
        .unwrap();
        assert!(law.gain.amax() < 1e-6);
        // At zero deviation the law returns the anchor exactly.
        let u = law.input_for(&DVector::from_vec(vec![0.0]));
        assert_eq!(u[0], 1.0);
    }

    #[test]
    fn tracking_quadratic_has_unit_gain() {
        // phi = (u - d)^2 / 2: the optimal input tracks the disturbance.
        let cost = |u: &DVec, d: &DVec| 0.5 * (u[0] - d[0]) * (u[0] - d[0]);
        let rows = |_u: &DVec, _d: &DVec| DVector::zeros(0);
        let law = build_vcl(
            &cost,
            &rows,
            0,
            &DVector::from_vec(vec![0.3]),
            &DVector::from_vec(vec![0.3]),
            &DVector::from_vec(vec![1.0]),
            vec![],
        )
        .unwrap();
        assert_relative_eq!(law.gain[(0, 0)], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn singular_kkt_is_degenerate() {
        let cost = |_u: &DVec, _d: &DVec| 0.0;
        let rows = |_u: &DVec, _d: &DVec| DVector::zeros(0);
        assert!(matches!(
            build_vcl(
                &cost,
                &rows,
                0,
                &DVector::from_vec(vec![0.0]),
                &DVector::from_vec(vec![0.0]),
                &DVector::from_vec(vec![1.0]),
                vec![],
            ),
            Err(AspError::DegenerateLaw(_))
        ));
    }
}
