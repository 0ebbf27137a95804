use std::sync::Arc;

use nalgebra::DVector;
use rto_core::types::{Bounds, ProblemSpec, ScalarMap};
use rto_core::DVec;
use rto_correction::{EvalOrder, Submodel, SubmodelNetwork, WireSource};

use crate::examples::{ClosurePlant, ExampleBundle};

/// One study instance: the model as a submodel network, the plant as a
/// measurable output map, and the composed engineer-facing problem.
pub struct StudyInstance {
    pub name: String,
    pub network: SubmodelNetwork,
    pub plant_outputs: Arc<dyn Fn(&DVec) -> DVec + Send + Sync>,
    pub spec: ProblemSpec,
    pub cost: ScalarMap,
}

/// The four cost options shared by the studies.
pub fn study_cost(idx: usize) -> ScalarMap {
    match idx {
        1 => Arc::new(|_u: &DVec, y: &DVec| y[1]),
        2 => Arc::new(|u: &DVec, y: &DVec| u[0] * y[1]),
        3 => Arc::new(|_u: &DVec, y: &DVec| y[1] * y[1]),
        4 => Arc::new(|u: &DVec, y: &DVec| {
            1.5 * u[0] * u[0] + 0.05 * u[0] * y[1] + 0.005 * y[1] * y[1]
        }),
        _ => panic!("cost index must be 1..=4"),
    }
}

fn spec_from_network(
    network: &SubmodelNetwork,
    cost: ScalarMap,
    bounds: Bounds,
    n_y: usize,
) -> ProblemSpec {
    let net = network.clone();
    ProblemSpec::new(
        Arc::new(move |u: &DVec, _t: &DVec| net.eval(u).expect("network eval")),
        DVector::zeros(0),
        cost,
        Arc::new(|_u: &DVec, _y: &DVec| DVector::zeros(0)),
        bounds,
        network.n_u,
        n_y,
        0,
        0,
    )
    .expect("study spec")
}

/// Open-loop chain (two scalar submodels in series).
///
/// Scenario 1 makes the first pair affine, scenario 2 the second, scenario
/// 3 keeps both nonlinear. `theta` = [t1..t6] model parameters; `theta_p` =
/// [tp1, tp2] plant parameters.
pub fn study1_instance(
    scenario: u8,
    theta: [f64; 6],
    theta_p: [f64; 2],
    cost_idx: usize,
) -> StudyInstance {
    let [t1, t2, t3, t4, t5, t6] = theta;
    let [tp1, tp2] = theta_p;
    let network = SubmodelNetwork {
        submodels: vec![
            Submodel {
                name: "sm1".into(),
                f: Arc::new(move |z: &DVec| {
                    DVector::from_vec(vec![t1 + t2 * z[0] + t3 * z[0] * z[0]])
                }),
                n_in: 1,
                n_out: 1,
            },
            Submodel {
                name: "sm2".into(),
                f: Arc::new(move |z: &DVec| {
                    DVector::from_vec(vec![t4 + t5 * z[0] + t6 * z[0] * z[0]])
                }),
                n_in: 1,
                n_out: 1,
            },
        ],
        wiring: vec![
            vec![WireSource::Input(0)],
            vec![WireSource::SubmodelOutput {
                submodel: 0,
                output: 0,
            }],
        ],
        outputs: vec![(0, 0), (1, 0)],
        order: EvalOrder::Topological(vec![0, 1]),
        n_u: 1,
    };
    let plant_outputs: Arc<dyn Fn(&DVec) -> DVec + Send + Sync> = Arc::new(move |u: &DVec| {
        let y1 = 2.0 - 2.0 * u[0] + tp1 * u[0] * u[0];
        let y2 = 2.0 - 2.0 * y1 + tp2 * y1 * y1;
        DVector::from_vec(vec![y1, y2])
    });
    let cost = study_cost(cost_idx);
    let spec = spec_from_network(
        &network,
        cost.clone(),
        Bounds::new(vec![-1.0], vec![1.0]).unwrap(),
        2,
    );
    StudyInstance {
        name: format!("study1-s{scenario}"),
        network,
        plant_outputs,
        spec,
        cost,
    }
}

/// Closed-loop pair: the first submodel sees (u, y2), the second sees y1.
pub fn study2_instance(
    scenario: u8,
    theta: [f64; 7],
    theta_p: [f64; 2],
    cost_idx: usize,
) -> StudyInstance {
    let [t1, t2, t3, t4, t5, t6, t7] = theta;
    let [tp1, tp2] = theta_p;
    let network = SubmodelNetwork {
        submodels: vec![
            Submodel {
                name: "sm1".into(),
                f: Arc::new(move |z: &DVec| {
                    let lin = t2 * z[0] + 0.01 * z[1];
                    let quad = 0.01 * z[0] * z[0] + 2.0 * t4 * z[0] * z[1] + 0.002 * z[1] * z[1];
                    DVector::from_vec(vec![t1 + lin + t3 * quad])
                }),
                n_in: 2,
                n_out: 1,
            },
            Submodel {
                name: "sm2".into(),
                f: Arc::new(move |z: &DVec| {
                    DVector::from_vec(vec![t5 + t6 * z[0] + t7 * z[0] * z[0]])
                }),
                n_in: 1,
                n_out: 1,
            },
        ],
        wiring: vec![
            vec![
                WireSource::Input(0),
                WireSource::SubmodelOutput {
                    submodel: 1,
                    output: 0,
                },
            ],
            vec![WireSource::SubmodelOutput {
                submodel: 0,
                output: 0,
            }],
        ],
        outputs: vec![(0, 0), (1, 0)],
        order: EvalOrder::FixedPoint {
            damping: 0.5,
            tol: 1e-10,
            cap: 500,
        },
        n_u: 1,
    };
    let plant_outputs: Arc<dyn Fn(&DVec) -> DVec + Send + Sync> = Arc::new(move |u: &DVec| {
        // Damped fixed point on (y1, y2).
        let mut y1 = 0.0;
        let mut y2 = 0.0;
        for _ in 0..500 {
            let f1 = 1.5 + (-1.0 * u[0] + 0.01 * y2)
                + tp1 * (0.01 * u[0] * u[0] + 2.0 * 0.08 * u[0] * y2 + 0.002 * y2 * y2);
            let f2 = 2.0 - 2.0 * y1 + tp2 * y1 * y1;
            let (n1, n2) = (0.5 * y1 + 0.5 * f1, 0.5 * y2 + 0.5 * f2);
            if (n1 - y1).abs().max((n2 - y2).abs()) < 1e-12 {
                y1 = n1;
                y2 = n2;
                break;
            }
            y1 = n1;
            y2 = n2;
        }
        DVector::from_vec(vec![y1, y2])
    });
    let cost = study_cost(cost_idx);
    let spec = spec_from_network(
        &network,
        cost.clone(),
        Bounds::new(vec![-1.0], vec![1.0]).unwrap(),
        2,
    );
    StudyInstance {
        name: format!("study2-s{scenario}"),
        network,
        plant_outputs,
        spec,
        cost,
    }
}

/// "Wrong" but consistent structure: the model chain misses the plant's
/// feedback, yet each plant-side map is still a function of the model-side
/// inputs.
pub fn study3_instance(theta: [f64; 6], cost_idx: usize) -> StudyInstance {
    let [t1, t2, t3, t4, t5, t6] = theta;
    let network = SubmodelNetwork {
        submodels: vec![
            Submodel {
                name: "sm1".into(),
                f: Arc::new(move |z: &DVec| {
                    DVector::from_vec(vec![t1 - t2 * z[0] + t3 * z[0] * z[0]])
                }),
                n_in: 1,
                n_out: 1,
            },
            Submodel {
                name: "sm2".into(),
                f: Arc::new(move |z: &DVec| {
                    DVector::from_vec(vec![t4 - t5 * z[0] + t6 * z[0] * z[0]])
                }),
                n_in: 1,
                n_out: 1,
            },
        ],
        wiring: vec![
            vec![WireSource::Input(0)],
            vec![WireSource::SubmodelOutput {
                submodel: 0,
                output: 0,
            }],
        ],
        outputs: vec![(0, 0), (1, 0)],
        order: EvalOrder::Topological(vec![0, 1]),
        n_u: 1,
    };
    let plant_outputs: Arc<dyn Fn(&DVec) -> DVec + Send + Sync> = Arc::new(move |u: &DVec| {
        // Plant has hidden feedback: y1 depends on (u, y2).
        let mut y1 = 0.0;
        let mut y2 = 0.0;
        for _ in 0..500 {
            let f1 = 1.0 - (u[0] + 0.01 * y2)
                + (0.01 * u[0] * u[0] + 2.0 * 0.08 * u[0] * y2 + 0.002 * y2 * y2);
            let f2 = 2.0 - 2.0 * y1 + 2.0 * y1 * y1;
            let (n1, n2) = (0.5 * y1 + 0.5 * f1, 0.5 * y2 + 0.5 * f2);
            if (n1 - y1).abs().max((n2 - y2).abs()) < 1e-12 {
                y1 = n1;
                y2 = n2;
                break;
            }
            y1 = n1;
            y2 = n2;
        }
        DVector::from_vec(vec![y1, y2])
    });
    let cost = study_cost(cost_idx);
    let spec = spec_from_network(
        &network,
        cost.clone(),
        Bounds::new(vec![-1.0], vec![1.0]).unwrap(),
        2,
    );
    StudyInstance {
        name: "study3".into(),
        network,
        plant_outputs,
        spec,
        cost,
    }
}

/// Inconsistent structure: the model swaps the roles of the two inputs, so
/// no plant-side function of the model-side submodel inputs exists.
pub fn study4_instance(theta: [f64; 6], cost_idx: usize) -> StudyInstance {
    let [t1, t2, t3, t4, t5, t6] = theta;
    let network = SubmodelNetwork {
        submodels: vec![
            Submodel {
                name: "sm1".into(),
                f: Arc::new(move |z: &DVec| {
                    DVector::from_vec(vec![t1 - t2 * z[0] + t3 * z[0] * z[0]])
                }),
                n_in: 1,
                n_out: 1,
            },
            Submodel {
                name: "sm2".into(),
                f: Arc::new(move |z: &DVec| {
                    DVector::from_vec(vec![
                        t4 - t5 * z[0] + t6 * (z[0] * z[0] + z[1] * z[1]),
                    ])
                }),
                n_in: 2,
                n_out: 1,
            },
        ],
        wiring: vec![
            // Model: z1 = u2, z2 = (u1, y1). The plant has them crossed.
            vec![WireSource::Input(1)],
            vec![
                WireSource::Input(0),
                WireSource::SubmodelOutput {
                    submodel: 0,
                    output: 0,
                },
            ],
        ],
        outputs: vec![(0, 0), (1, 0)],
        order: EvalOrder::Topological(vec![0, 1]),
        n_u: 2,
    };
    let plant_outputs: Arc<dyn Fn(&DVec) -> DVec + Send + Sync> = Arc::new(|u: &DVec| {
        let y1 = 1.0 - u[0] + 0.01 * u[0] * u[0];
        let y2 = 2.0 - 2.0 * u[1] + 2.0 * (u[1] * u[1] + y1 * y1);
        DVector::from_vec(vec![y1, y2])
    });
    let cost = match cost_idx {
        2 => Arc::new(|u: &DVec, y: &DVec| u[0] * y[1]) as ScalarMap,
        c => study_cost(c),
    };
    let spec = spec_from_network(
        &network,
        cost.clone(),
        Bounds::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
        2,
    );
    StudyInstance {
        name: "study4".into(),
        network,
        plant_outputs,
        spec,
        cost,
    }
}

fn bundle_from_instance(inst: StudyInstance) -> ExampleBundle {
    let plant_f = inst.plant_outputs.clone();
    let n_u = inst.network.n_u;
    ExampleBundle {
        name: inst.name.clone(),
        plant: Arc::new(ClosurePlant {
            n_u,
            n_y: 2,
            f: plant_f,
        }),
        spec: inst.spec,
        optimum: None,
        filter_constants: vec![],
        network: Some(inst.network),
    }
}

/// Registry defaults: mid-grid parameters, the composite cost.
pub fn study1_bundle(scenario: u8) -> ExampleBundle {
    let theta = match scenario {
        1 => [2.0, -2.0, 0.0, 2.0, -2.0, 2.0],
        2 => [2.0, -2.0, 2.0, 2.0, -2.0, 0.0],
        _ => [2.0, -2.0, 2.0, 2.0, -2.0, 2.0],
    };
    let theta_p = match scenario {
        1 => [0.0, 2.0],
        2 => [2.0, 0.0],
        _ => [2.0, 2.0],
    };
    bundle_from_instance(study1_instance(scenario, theta, theta_p, 4))
}

pub fn study4_bundle() -> ExampleBundle {
    bundle_from_instance(study4_instance([1.0, -1.0, 0.01, 2.0, -2.0, 2.0], 4))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn study1_network_matches_closed_form() {
        let inst = study1_instance(3, [2.0, -2.0, 2.0, 2.0, -2.0, 2.0], [2.0, 2.0], 1);
        let u = DVector::from_vec(vec![0.3]);
        let y = inst.network.eval(&u).unwrap();
        let y1 = 2.0 - 2.0 * 0.3 + 2.0 * 0.09;
        let y2 = 2.0 - 2.0 * y1 + 2.0 * y1 * y1;
        assert!((y[0] - y1).abs() < 1e-12);
        assert!((y[1] - y2).abs() < 1e-12);
    }

    #[test]
    fn study4_inputs_are_crossed() {
        let inst = study4_instance([1.0, -1.0, 0.01, 2.0, -2.0, 2.0], 1);
        // Model output 1 depends only on u2; plant output 1 only on u1.
        let net = &inst.network;
        let a = net.eval(&DVector::from_vec(vec![0.0, 0.5])).unwrap();
        let b = net.eval(&DVector::from_vec(vec![0.9, 0.5])).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-12, "model y1 must ignore u1");
        let pa = (inst.plant_outputs)(&DVector::from_vec(vec![0.0, 0.5]));
        let pb = (inst.plant_outputs)(&DVector::from_vec(vec![0.0, 0.9]));
        assert!((pa[0] - pb[0]).abs() < 1e-12, "plant y1 must ignore u2");
    }

    #[test]
    fn study2_fixed_point_agrees_with_direct_iteration() {
        let inst = study2_instance(3, [1.0, -1.0, 1.0, 0.08, 2.0, -2.0, 2.0], [1.0, 2.0], 1);
        let u = DVector::from_vec(vec![0.2]);
        let y = inst.network.eval(&u).unwrap();
        // The network solves y1 = f1(u, y2), y2 = f2(y1) self-consistently.
        let f1 = 1.0 + (-1.0 * 0.2 + 0.01 * y[1])
            + 1.0 * (0.01 * 0.04 + 0.16 * 0.2 * y[1] + 0.002 * y[1] * y[1]);
        let f2 = 2.0 - 2.0 * y[0] + 2.0 * y[0] * y[0];
        assert!((y[0] - f1).abs() < 1e-8);
        assert!((y[1] - f2).abs() < 1e-8);
    }
}
