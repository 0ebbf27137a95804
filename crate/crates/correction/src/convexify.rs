use std::sync::Arc;

use nalgebra::DVector;
use rto_core::{
    default_fd_step, finite_diff_gradient, finite_diff_hessian, linalg, DMat, DVec,
};

use crate::affine::CorrectedModel;
use crate::error::CorrectionError;

/// Local quadratic model anchored at a point: value, gradient and (clamped)
/// Hessian of the function it replaces.
#[derive(Debug, Clone)]
pub struct QuadraticModel {
    pub anchor: DVec,
    pub value: f64,
    pub gradient: DVec,
    pub hessian: DMat,
}

impl QuadraticModel {
    pub fn eval(&self, u: &DVec) -> f64 {
        let d = u - &self.anchor;
        self.value + self.gradient.dot(&d) + 0.5 * (d.transpose() * &self.hessian * &d)[(0, 0)]
    }

    pub fn grad(&self, u: &DVec) -> DVec {
        let d = u - &self.anchor;
        &self.gradient + &self.hessian * d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvexMode {
    /// One-time convexification of the nominal functions (anchor = the
    /// supplied reference point, typically the box center).
    Preprocess,
    /// Convexify the updated functions at each correction point.
    Successive,
}

/// One constraint row of a convexified problem: either the local convex
/// quadratic or the untouched original row (subset selection).
#[derive(Clone)]
pub enum ConvexRow {
    Quadratic(QuadraticModel),
    Kept(usize),
}

/// Cost and constraint rows after convexification, with closures and the
/// originals for the kept rows.
#[derive(Clone)]
pub struct ConvexifiedProblem {
    pub cost: QuadraticModel,
    pub rows: Vec<ConvexRow>,
    original_g: Arc<dyn Fn(&DVec) -> DVec + Send + Sync>,
    pub n_g: usize,
}

impl ConvexifiedProblem {
    pub fn cost_at(&self, u: &DVec) -> f64 {
        self.cost.eval(u)
    }

    /// All constraint rows evaluated at `u` (quadratic where convexified,
    /// original otherwise).
    pub fn rows_at(&self, u: &DVec) -> DVec {
        let orig = (self.original_g)(u);
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|r| match r {
                ConvexRow::Quadratic(q) => q.eval(u),
                ConvexRow::Kept(i) => orig[*i],
            }),
        )
    }
}

/// Matching-conditions-preserving convexification: each selected function is
/// replaced by its local quadratic model at the anchor, with the Hessian
/// spectrum clamped at a strictly positive floor for the cost and at zero
/// for constraints (a locally concave constraint is thus linearized).
///
/// `subset = None` convexifies every row; `Some(idx)` only the listed rows,
/// the others are kept as-is.
pub fn convexify(
    model: &CorrectedModel,
    u_k: &DVec,
    mode: ConvexMode,
    subset: Option<&[usize]>,
) -> Result<ConvexifiedProblem, CorrectionError> {
    let anchor = u_k.clone();
    let h = default_fd_step(&anchor);

    let phi = model.phi.clone();
    let value = phi(&anchor);
    if !value.is_finite() {
        return Err(CorrectionError::Hessian("cost not finite at anchor".into()));
    }
    let gradient = finite_diff_gradient(|u: &DVec| phi(u), &anchor, &h)?;
    let hess = finite_diff_hessian(|u: &DVec| phi(u), &anchor, &h)
        .map_err(|e| CorrectionError::Hessian(e.to_string()))?;
    let lam_max = hess
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0_f64, |a, b| a.max(b.abs()));
    let cost_floor = 1e-6 * (1.0 + lam_max);
    let cost = QuadraticModel {
        anchor: anchor.clone(),
        value,
        gradient,
        hessian: linalg::psd_clamp(&hess, cost_floor),
    };

    let g = model.g.clone();
    let mut rows = Vec::with_capacity(model.n_g);
    for i in 0..model.n_g {
        let selected = subset.map(|s| s.contains(&i)).unwrap_or(true);
        if !selected {
            rows.push(ConvexRow::Kept(i));
            continue;
        }
        let gi = |u: &DVec| g(u)[i];
        let value = gi(&anchor);
        let gradient = finite_diff_gradient(gi, &anchor, &h)?;
        let hess = finite_diff_hessian(gi, &anchor, &h)
            .map_err(|e| CorrectionError::Hessian(e.to_string()))?;
        rows.push(ConvexRow::Quadratic(QuadraticModel {
            anchor: anchor.clone(),
            value,
            gradient,
            hessian: linalg::psd_clamp(&hess, 0.0),
        }));
    }
    let _ = mode; // both modes build the same local quadratics; the anchor
                  // choice (reference point vs correction point) is the caller's.
    Ok(ConvexifiedProblem {
        cost,
        rows,
        original_g: model.g.clone(),
        n_g: model.n_g,
    })
}

/// Re-convexifying explicit quadratic data is exact: unchanged when the
/// spectrum already clears the floor.
pub fn convexify_quadratic(q: &QuadraticModel, floor: f64) -> QuadraticModel {
    QuadraticModel {
        anchor: q.anchor.clone(),
        value: q.value,
        gradient: q.gradient.clone(),
        hessian: linalg::psd_clamp(&q.hessian, floor),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn scalar_model<F: Fn(f64) -> f64 + Send + Sync + 'static>(
        phi: F,
        g: Option<Box<dyn Fn(f64) -> f64 + Send + Sync>>,
    ) -> CorrectedModel {
        let n_g = g.is_some() as usize;
        CorrectedModel {
            phi: Arc::new(move |u: &DVec| phi(u[0])),
            g: Arc::new(move |u: &DVec| match &g {
                Some(f) => DVector::from_vec(vec![f(u[0])]),
                None => DVector::zeros(0),
            }),
            f: None,
            n_g,
        }
    }

    #[test]
    fn convex_cost_keeps_its_hessian() {
        let model = scalar_model(|u| u * u / 4.0, None);
        let u_k = DVector::from_vec(vec![0.3]);
        let c = convexify(&model, &u_k, ConvexMode::Successive, None).unwrap();
        // Hessian 1/2 (no shift beyond the eigen floor).
        assert_relative_eq!(c.cost.hessian[(0, 0)], 0.5, epsilon = 1e-4);
        // Value and gradient match at the anchor.
        assert_relative_eq!(c.cost.eval(&u_k), 0.3 * 0.3 / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn concave_constraint_is_linearized() {
        // g with Hessian -4 at the anchor: clamped to zero curvature.
        let model = scalar_model(|u| u, Some(Box::new(|u| 1.0 - 2.0 * u * u)));
        let u_k = DVector::from_vec(vec![0.5]);
        let c = convexify(&model, &u_k, ConvexMode::Successive, None).unwrap();
        match &c.rows[0] {
            ConvexRow::Quadratic(q) => {
                assert!(q.hessian[(0, 0)].abs() < 1e-4, "should be linearized");
                // Matching at the anchor.
                assert_relative_eq!(q.eval(&u_k), 0.5, epsilon = 1e-10);
                assert_relative_eq!(q.gradient[0], -2.0, epsilon = 1e-5);
            }
            _ => panic!("row should be convexified"),
        }
    }

    #[test]
    fn subset_keeps_unselected_rows() {
        let model = CorrectedModel {
            phi: Arc::new(|u: &DVec| u[0] * u[0]),
            g: Arc::new(|u: &DVec| DVector::from_vec(vec![-u[0] * u[0], u[0] - 1.0])),
            f: None,
            n_g: 2,
        };
        let u_k = DVector::from_vec(vec![0.2]);
        let c = convexify(&model, &u_k, ConvexMode::Successive, Some(&[1])).unwrap();
        assert!(matches!(c.rows[0], ConvexRow::Kept(0)));
        assert!(matches!(c.rows[1], ConvexRow::Quadratic(_)));
        // Kept row evaluates the original function away from the anchor.
        let far = DVector::from_vec(vec![2.0]);
        assert_relative_eq!(c.rows_at(&far)[0], -4.0, epsilon = 1e-12);
    }

    #[test]
    fn idempotent_on_explicit_quadratics() {
        let q = QuadraticModel {
            anchor: DVector::from_vec(vec![0.0]),
            value: 1.0,
            gradient: DVector::from_vec(vec![-2.0]),
            hessian: nalgebra::DMatrix::from_element(1, 1, 0.5),
        };
        let q2 = convexify_quadratic(&q, 1e-9);
        let probe = DVector::from_vec(vec![1.7]);
        assert!((q.eval(&probe) - q2.eval(&probe)).abs() <= 1e-12);
    }
}
