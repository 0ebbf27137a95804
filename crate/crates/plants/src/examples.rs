use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rto_core::types::{Bounds, Plant, ProblemSpec};
use rto_core::{CoreError, DVec};
use rto_correction::SubmodelNetwork;

use crate::studies;
use crate::PlantError;

/// Closure-backed noise-free plant used by the mathematical examples. The
/// example families of the theory chapters carry no measurement noise.
pub struct ClosurePlant {
    pub n_u: usize,
    pub n_y: usize,
    pub f: Arc<dyn Fn(&DVec) -> DVec + Send + Sync>,
}

impl Plant for ClosurePlant {
    fn n_u(&self) -> usize {
        self.n_u
    }
    fn n_y(&self) -> usize {
        self.n_y
    }
    fn n_d_measured(&self) -> usize {
        0
    }
    fn n_d_unmeasured(&self) -> usize {
        0
    }
    fn noise_std(&self) -> DVec {
        DVector::zeros(self.n_y)
    }
    fn eval_clean(
        &self,
        u: &DVec,
        _d_measured: &DVec,
        _d_unmeasured: &DVec,
    ) -> Result<DVec, CoreError> {
        let y = (self.f)(u);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite {
                at: u.iter().copied().collect(),
            });
        }
        Ok(y)
    }
}

/// One registered example: the plant, the engineer-facing problem, the
/// published landmarks, and (for the structure studies) the submodel
/// network.
pub struct ExampleBundle {
    pub name: String,
    pub plant: Arc<dyn Plant>,
    pub spec: ProblemSpec,
    /// Known optimum of the plant, where published or closed-form.
    pub optimum: Option<DVec>,
    /// Known filter constants (subspace-wise optimal gains).
    pub filter_constants: Vec<f64>,
    pub network: Option<SubmodelNetwork>,
}

fn scalar_cost() -> rto_core::types::ScalarMap {
    Arc::new(|_u: &DVec, y: &DVec| y[0])
}

fn no_constraints() -> rto_core::types::VectorMap {
    Arc::new(|_u: &DVec, _y: &DVec| DVector::zeros(0))
}

fn scalar_plant<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Arc<dyn Plant> {
    Arc::new(ClosurePlant {
        n_u: 1,
        n_y: 1,
        f: Arc::new(move |u: &DVec| DVector::from_vec(vec![f(u[0])])),
    })
}

fn spec_scalar_model<F: Fn(f64) -> f64 + Send + Sync + 'static>(
    f: F,
    bounds: Bounds,
) -> ProblemSpec {
    ProblemSpec::new(
        Arc::new(move |u: &DVec, _t: &DVec| DVector::from_vec(vec![f(u[0])])),
        DVector::zeros(0),
        scalar_cost(),
        no_constraints(),
        bounds,
        1,
        1,
        0,
        0,
    )
    .expect("scalar spec")
}

/// The shifted-parabola family: plant (u-1)^2, model u^2/4, box [-5, 5].
/// Optimal gain 1/4, anchored-optimizer slope -3.
fn ex2_1() -> ExampleBundle {
    ExampleBundle {
        name: "ex2.1".into(),
        plant: scalar_plant(|u| (u - 1.0) * (u - 1.0)),
        spec: spec_scalar_model(|u| u * u / 4.0, Bounds::new(vec![-5.0], vec![5.0]).unwrap()),
        optimum: Some(DVector::from_vec(vec![1.0])),
        filter_constants: vec![0.25],
        network: None,
    }
}

/// Quadratic bowl with axis-wise curvature ratios: plant
/// 1/2 (u-1)' A (u-1), model u'u/4. Subspace-wise optimal gains
/// 1/(1 + 2 a_i) ... resolved below from the Hessian ratio.
fn ex2_2(diag: &[f64]) -> ExampleBundle {
    let n = diag.len();
    let a = DMatrix::from_diagonal(&DVector::from_vec(diag.to_vec()));
    let a_plant = a.clone();
    let plant = Arc::new(ClosurePlant {
        n_u: n,
        n_y: 1,
        f: Arc::new(move |u: &DVec| {
            let d = u - DVector::from_element(u.len(), 1.0);
            DVector::from_vec(vec![0.5 * (d.transpose() * &a_plant * &d)[(0, 0)]])
        }),
    });
    let spec = ProblemSpec::new(
        Arc::new(|u: &DVec, _t: &DVec| DVector::from_vec(vec![u.dot(u) / 4.0])),
        DVector::zeros(0),
        scalar_cost(),
        no_constraints(),
        Bounds::new(vec![-5.0; n], vec![5.0; n]).unwrap(),
        n,
        1,
        0,
        0,
    )
    .unwrap();
    // Per-axis anchored-optimizer slope 1 - a_i/(1/2); optimal gain
    // 1/(1 - slope).
    let gains = diag
        .iter()
        .map(|ai| 1.0 / (1.0 - (1.0 - ai / 0.5)))
        .collect();
    ExampleBundle {
        name: format!("ex2.2-{}d", n),
        plant,
        spec,
        optimum: Some(DVector::from_element(n, 1.0)),
        filter_constants: gains,
        network: None,
    }
}

/// Steep model variant: plant (u-1)^2, model 5 u^2. The anchored-optimizer
/// slope is +0.8, so the optimal gain is 5 (> 1).
fn ex2_3() -> ExampleBundle {
    ExampleBundle {
        name: "ex2.3".into(),
        plant: scalar_plant(|u| (u - 1.0) * (u - 1.0)),
        spec: spec_scalar_model(|u| 5.0 * u * u, Bounds::new(vec![-5.0], vec![5.0]).unwrap()),
        optimum: Some(DVector::from_vec(vec![1.0])),
        filter_constants: vec![5.0],
        network: None,
    }
}

/// Sixth-degree landscape with two minima (-1, 2), a maximum (0) and a
/// saddle (1); model u^2/4.
fn ex2_4() -> ExampleBundle {
    ExampleBundle {
        name: "ex2.4".into(),
        plant: scalar_plant(|u| {
            0.25 - 0.25 * u.powi(2) + 0.25 * u.powi(3) + u.powi(4) / 16.0 - 0.15 * u.powi(5)
                + u.powi(6) / 24.0
        }),
        spec: spec_scalar_model(|u| u * u / 4.0, Bounds::new(vec![-3.0], vec![3.5]).unwrap()),
        optimum: Some(DVector::from_vec(vec![-1.0])),
        filter_constants: vec![],
        network: None,
    }
}

/// Cubic-constraint family: both outputs matter, the second output is the
/// constraint and is locally concave near the start.
fn ex3_1() -> ExampleBundle {
    let plant = Arc::new(ClosurePlant {
        n_u: 1,
        n_y: 2,
        f: Arc::new(|u: &DVec| {
            let x = u[0];
            DVector::from_vec(vec![
                5.0 - 14.0 * x + 8.0 * x * x,
                -2.0 + 7.0 * x - 29.0 * x * x + 32.0 * x * x * x,
            ])
        }),
    });
    let spec = ProblemSpec::new(
        Arc::new(|u: &DVec, _t: &DVec| {
            let x = u[0];
            DVector::from_vec(vec![
                0.2 - 2.0 * x + 5.0 * x * x,
                -2.0 + 9.0 * x - 35.0 * x * x + 40.0 * x * x * x,
            ])
        }),
        DVector::zeros(0),
        Arc::new(|_u: &DVec, y: &DVec| y[0]),
        Arc::new(|_u: &DVec, y: &DVec| DVector::from_vec(vec![y[1]])),
        Bounds::new(vec![0.0], vec![1.0]).unwrap(),
        1,
        2,
        1,
        0,
    )
    .unwrap();
    ExampleBundle {
        name: "ex3.1".into(),
        plant,
        spec,
        // Constrained optimum: the cost decreases toward 0.875 but the
        // constraint root near 0.7228 is binding (computed by oracles).
        optimum: None,
        filter_constants: vec![],
        network: None,
    }
}

/// Concave-ridge bypass family: quadratic costs, a single concave
/// constraint shared by plant and model.
fn ex3_2() -> ExampleBundle {
    let g = |u: &DVec| -> f64 {
        -2.0 + 6.0 * u[0] + 10.0 * u[1] - 0.5 * (20.0 * u[0] * u[0] + 36.0 * u[1] * u[1])
    };
    let plant = Arc::new(ClosurePlant {
        n_u: 2,
        n_y: 2,
        f: Arc::new(move |u: &DVec| {
            let phi = -(4.0 * u[0] + 2.0 * u[1]) + 0.5 * (8.0 * u[0] * u[0] + 4.0 * u[1] * u[1]);
            DVector::from_vec(vec![phi, g(u)])
        }),
    });
    let spec = ProblemSpec::new(
        Arc::new(move |u: &DVec, _t: &DVec| {
            let phi = -(0.1 * u[0] + 0.1 * u[1]) + 0.5 * (2.0 * u[0] * u[0] + 2.0 * u[1] * u[1]);
            DVector::from_vec(vec![phi, g(u)])
        }),
        DVector::zeros(0),
        Arc::new(|_u: &DVec, y: &DVec| y[0]),
        Arc::new(|_u: &DVec, y: &DVec| DVector::from_vec(vec![y[1]])),
        Bounds::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
        2,
        2,
        1,
        0,
    )
    .unwrap();
    ExampleBundle {
        name: "ex3.2".into(),
        plant,
        spec,
        optimum: Some(DVector::from_vec(vec![0.5, 0.5])),
        filter_constants: vec![],
        network: None,
    }
}

/// Rotated-bowl family where plant and model constraints differ: the
/// applied points stay model-feasible yet the plant constraint can still be
/// violated on the way.
fn ex3_4() -> ExampleBundle {
    let plant = Arc::new(ClosurePlant {
        n_u: 2,
        n_y: 2,
        f: Arc::new(|u: &DVec| {
            let d = DVector::from_vec(vec![u[0] - 1.0, u[1] - 0.3]);
            let phi = 0.5 * (2.0 * d[0] * d[0] + 2.0 * d[0] * d[1] + 2.0 * d[1] * d[1]);
            let e = DVector::from_vec(vec![u[0] - 1.0, u[1]]);
            let gp = 0.3 - 0.5 * (e[0] * e[0] + e[1] * e[1]);
            DVector::from_vec(vec![phi, gp])
        }),
    });
    let spec = ProblemSpec::new(
        Arc::new(|u: &DVec, _t: &DVec| {
            let d = DVector::from_vec(vec![u[0] - 0.5, u[1] - 0.6]);
            let phi = 0.5 * (2.0 * d[0] * d[0] - 2.2 * d[0] * d[1] + 2.0 * d[1] * d[1]);
            let e = DVector::from_vec(vec![u[0] - 1.2, u[1] - 0.1]);
            let gm = 0.75 - 0.5 * (1.7 * e[0] * e[0] + 1.02 * e[0] * e[1] + 1.7 * e[1] * e[1]);
            DVector::from_vec(vec![phi, gm])
        }),
        DVector::zeros(0),
        Arc::new(|_u: &DVec, y: &DVec| y[0]),
        Arc::new(|_u: &DVec, y: &DVec| DVector::from_vec(vec![y[1]])),
        Bounds::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
        2,
        2,
        1,
        0,
    )
    .unwrap();
    ExampleBundle {
        name: "ex3.4".into(),
        plant,
        spec,
        optimum: None,
        filter_constants: vec![],
        network: None,
    }
}

/// Name-based registry of every example family.
pub fn instantiate_example(name: &str) -> Result<ExampleBundle, PlantError> {
    match name {
        "ex2.1" => Ok(ex2_1()),
        "ex2.2-2d" => Ok(ex2_2(&[2.0, 1.0])),
        "ex2.2-3d" => Ok(ex2_2(&[2.0, 1.0, 2.0 / 3.0])),
        "ex2.3" => Ok(ex2_3()),
        "ex2.4" => Ok(ex2_4()),
        "ex3.1" => Ok(ex3_1()),
        "ex3.2" => Ok(ex3_2()),
        "ex3.4" => Ok(ex3_4()),
        "study1-s1" => Ok(studies::study1_bundle(1)),
        "study1-s2" => Ok(studies::study1_bundle(2)),
        "study1-s3" => Ok(studies::study1_bundle(3)),
        "study4" => Ok(studies::study4_bundle()),
        "wo-reactor-mode1" => Ok(crate::wo_reactor::wo_reactor_bundle(crate::WoMode::Mode1)),
        "wo-reactor-mode2" => Ok(crate::wo_reactor::wo_reactor_bundle(crate::WoMode::Mode2)),
        "wo-plant" => Ok(crate::wo_plant::wo_plant_bundle()),
        other => Err(PlantError::UnknownExample(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ex2_1_plant_vanishes_at_its_optimum() {
        let b = instantiate_example("ex2.1").unwrap();
        let y = b
            .plant
            .eval_clean(&DVector::from_vec(vec![1.0]), &DVector::zeros(0), &DVector::zeros(0))
            .unwrap();
        assert_eq!(y[0], 0.0);
    }

    #[test]
    fn ex2_2_filter_constants_from_hessian_ratio() {
        let b2 = instantiate_example("ex2.2-2d").unwrap();
        assert_relative_eq!(b2.filter_constants[0], 0.25, epsilon = 1e-12);
        assert_relative_eq!(b2.filter_constants[1], 0.5, epsilon = 1e-12);
        let b3 = instantiate_example("ex2.2-3d").unwrap();
        assert_relative_eq!(b3.filter_constants[2], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn ex2_4_stationary_points_by_root_finding() {
        // grad f_p roots found by sign-change bisection must be
        // {-1, 0, 1, 2}.
        let b = instantiate_example("ex2.4").unwrap();
        let f = |u: f64| {
            b.plant
                .eval_clean(&DVector::from_vec(vec![u]), &DVector::zeros(0), &DVector::zeros(0))
                .unwrap()[0]
        };
        let grad = |u: f64| (f(u + 1e-6) - f(u - 1e-6)) / 2e-6;
        let mut roots = vec![];
        let n = 1100;
        let du = 4.5 / n as f64;
        let mut prev = grad(-2.0);
        for i in 1..=n {
            let u = -2.0 + 4.5 * i as f64 / n as f64;
            let g = grad(u);
            if prev * g < 0.0 {
                // Sign change: bisection.
                let (mut lo, mut hi) = (u - du, u);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if grad(lo) * grad(mid) <= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                roots.push(0.5 * (lo + hi));
            } else if g.abs() < 1e-4 && grad(u - du).abs() > g.abs() && grad(u + du).abs() > g.abs()
            {
                // Tangency root (double root of the gradient, the saddle):
                // golden-section on |grad|.
                let (mut lo, mut hi) = (u - du, u + du);
                for _ in 0..200 {
                    let m1 = lo + 0.381966 * (hi - lo);
                    let m2 = hi - 0.381966 * (hi - lo);
                    if grad(m1).abs() < grad(m2).abs() {
                        hi = m2;
                    } else {
                        lo = m1;
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
            prev = g;
        }
        roots.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
        let expected = [-1.0, 0.0, 1.0, 2.0];
        assert_eq!(roots.len(), 4, "roots: {roots:?}");
        for (r, e) in roots.iter().zip(expected) {
            assert!((r - e).abs() < 1e-5, "root {r} vs {e}");
        }
    }

    #[test]
    fn unknown_name_is_rejected() {
        assert!(matches!(
            instantiate_example("nope"),
            Err(PlantError::UnknownExample(_))
        ));
    }
}
