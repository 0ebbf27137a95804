use std::sync::Arc;

use nalgebra::DVector;
use rto_core::DVec;

use crate::error::CorrectionError;

/// One block of the model: a function from its local inputs `z` to its
/// outputs `y^(i)`.
#[derive(Clone)]
pub struct Submodel {
    pub name: String,
    pub f: Arc<dyn Fn(&DVec) -> DVec + Send + Sync>,
    pub n_in: usize,
    pub n_out: usize,
}

/// Where a submodel input entry comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WireSource {
    /// A coordinate of the global input u.
    Input(usize),
    /// Output `output` of submodel `submodel`.
    SubmodelOutput { submodel: usize, output: usize },
}

/// How the network is evaluated.
#[derive(Debug, Clone)]
pub enum EvalOrder {
    /// Acyclic network evaluated in this submodel order.
    Topological(Vec<usize>),
    /// Cyclic network solved by damped fixed-point iteration on the
    /// submodel outputs.
    FixedPoint { damping: f64, tol: f64, cap: usize },
}

/// A model expressed as interconnected submodels. The global outputs are a
/// declared list of (submodel, local output) pairs in measurement order.
#[derive(Clone)]
pub struct SubmodelNetwork {
    pub submodels: Vec<Submodel>,
    /// Per submodel, one source per z entry.
    pub wiring: Vec<Vec<WireSource>>,
    /// Global measured outputs.
    pub outputs: Vec<(usize, usize)>,
    pub order: EvalOrder,
    pub n_u: usize,
}

impl SubmodelNetwork {
    pub fn validate(&self) -> Result<(), CorrectionError> {
        if self.wiring.len() != self.submodels.len() {
            return Err(CorrectionError::Wiring(
                "one wiring list per submodel required".into(),
            ));
        }
        for (i, (sm, wires)) in self.submodels.iter().zip(&self.wiring).enumerate() {
            if wires.len() != sm.n_in {
                return Err(CorrectionError::Wiring(format!(
                    "submodel {i} expects {} inputs, wiring lists {}",
                    sm.n_in,
                    wires.len()
                )));
            }
            for w in wires {
                match w {
                    WireSource::Input(j) if *j >= self.n_u => {
                        return Err(CorrectionError::Wiring(format!(
                            "submodel {i} wired to input {j} out of range"
                        )))
                    }
                    WireSource::SubmodelOutput { submodel, output } => {
                        if *submodel >= self.submodels.len()
                            || *output >= self.submodels[*submodel].n_out
                        {
                            return Err(CorrectionError::Wiring(format!(
                                "submodel {i} wired to missing output {output} of {submodel}"
                            )));
                        }
                    }
                    _ => {}
                }
            }
        }
        if let EvalOrder::Topological(order) = &self.order {
            // Every dependency must appear earlier in the order.
            let pos: Vec<usize> = {
                let mut p = vec![usize::MAX; self.submodels.len()];
                for (rank, &i) in order.iter().enumerate() {
                    p[i] = rank;
                }
                p
            };
            for (i, wires) in self.wiring.iter().enumerate() {
                for w in wires {
                    if let WireSource::SubmodelOutput { submodel, .. } = w {
                        if pos[*submodel] >= pos[i] {
                            return Err(CorrectionError::Wiring(format!(
                                "topological order violates dependency {submodel} -> {i}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Assemble z^(i) from the global input and the current submodel
    /// outputs.
    pub fn assemble_z(&self, i: usize, u: &DVec, sm_outputs: &[DVec]) -> DVec {
        DVector::from_iterator(
            self.wiring[i].len(),
            self.wiring[i].iter().map(|w| match w {
                WireSource::Input(j) => u[*j],
                WireSource::SubmodelOutput { submodel, output } => sm_outputs[*submodel][*output],
            }),
        )
    }

    /// Evaluate the network with optional per-submodel output corrections.
    /// The correction closure receives `(submodel index, z, u)` and returns
    /// an additive output term.
    pub fn eval_with(
        &self,
        u: &DVec,
        correction: &dyn Fn(usize, &DVec, &DVec) -> DVec,
    ) -> Result<DVec, CorrectionError> {
        let n_sm = self.submodels.len();
        let mut sm_outputs: Vec<DVec> =
            self.submodels.iter().map(|s| DVector::zeros(s.n_out)).collect();
        match &self.order {
            EvalOrder::Topological(order) => {
                for &i in order {
                    let z = self.assemble_z(i, u, &sm_outputs);
                    sm_outputs[i] = (self.submodels[i].f)(&z) + correction(i, &z, u);
                }
            }
            EvalOrder::FixedPoint { damping, tol, cap } => {
                let mut residual = f64::INFINITY;
                let mut it = 0;
                while residual > *tol {
                    if it >= *cap {
                        return Err(CorrectionError::FixedPointDiverged {
                            iterations: it,
                            residual,
                        });
                    }
                    residual = 0.0;
                    let prev = sm_outputs.clone();
                    for i in 0..n_sm {
                        let z = self.assemble_z(i, u, &prev);
                        let fresh = (self.submodels[i].f)(&z) + correction(i, &z, u);
                        let mixed = &prev[i] * (1.0 - damping) + fresh * *damping;
                        residual = residual.max((&mixed - &prev[i]).amax());
                        sm_outputs[i] = mixed;
                    }
                    it += 1;
                }
            }
        }
        Ok(DVector::from_iterator(
            self.outputs.len(),
            self.outputs.iter().map(|(s, o)| sm_outputs[*s][*o]),
        ))
    }

    /// Uncorrected network outputs.
    pub fn eval(&self, u: &DVec) -> Result<DVec, CorrectionError> {
        self.eval_with(u, &|i, _z, _u| DVector::zeros(self.submodels[i].n_out))
    }
}

/// Plant-side view of the network: the measurable submodel outputs and
/// submodel inputs as functions of the plant input (the mixer/demixer
/// combining u with the measured outputs, following the model's wiring).
pub trait NetworkPlantProbe {
    /// Plant-side outputs of submodel `i` at input `u`.
    fn submodel_outputs(&self, i: usize, u: &DVec) -> Result<DVec, CorrectionError>;
    /// Plant-side inputs `z_p^(i)` at input `u`.
    fn submodel_inputs(&self, i: usize, u: &DVec) -> Result<DVec, CorrectionError>;
    fn n_u(&self) -> usize;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_network() -> SubmodelNetwork {
        // f1(u) = 2 - 2u, f2(z) = z^2 in series.
        SubmodelNetwork {
            submodels: vec![
                Submodel {
                    name: "first".into(),
                    f: Arc::new(|z: &DVec| DVector::from_vec(vec![2.0 - 2.0 * z[0]])),
                    n_in: 1,
                    n_out: 1,
                },
                Submodel {
                    name: "second".into(),
                    f: Arc::new(|z: &DVec| DVector::from_vec(vec![z[0] * z[0]])),
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
        }
    }

    #[test]
    fn chain_evaluates_in_order() {
        let net = chain_network();
        net.validate().unwrap();
        let y = net.eval(&DVector::from_vec(vec![0.5])).unwrap();
        assert_eq!(y[0], 1.0);
        assert_eq!(y[1], 1.0);
    }

    #[test]
    fn bad_order_is_rejected() {
        let mut net = chain_network();
        net.order = EvalOrder::Topological(vec![1, 0]);
        assert!(net.validate().is_err());
    }

    #[test]
    fn fixed_point_solves_a_contraction() {
        // y = 0.5 y + u: closed form y = 2u.
        let net = SubmodelNetwork {
            submodels: vec![Submodel {
                name: "loop".into(),
                f: Arc::new(|z: &DVec| DVector::from_vec(vec![0.5 * z[1] + z[0]])),
                n_in: 2,
                n_out: 1,
            }],
            wiring: vec![vec![
                WireSource::Input(0),
                WireSource::SubmodelOutput {
                    submodel: 0,
                    output: 0,
                },
            ]],
            outputs: vec![(0, 0)],
            order: EvalOrder::FixedPoint {
                damping: 0.5,
                tol: 1e-12,
                cap: 500,
            },
            n_u: 1,
        };
        net.validate().unwrap();
        let y = net.eval(&DVector::from_vec(vec![1.5])).unwrap();
        assert!((y[0] - 3.0).abs() < 1e-9);
    }
}
