use nalgebra::{DMatrix, DVector};
use rto_core::types::{PlantInterface, ProblemSpec};
use rto_core::{CoreError, DMat, DVec};

/// Everything a driver can ask about the plant at one operating point:
/// values and first-order information for both the direct and indirect
/// structures.
#[derive(Debug, Clone)]
pub struct PlantMeasurement {
    pub cost_value: f64,
    pub cost_gradient: DVec,
    pub constraint_values: DVec,
    pub constraint_jacobian: DMat,
    pub outputs: DVec,
    pub output_jacobian: DMat,
}

pub trait PlantProbe {
    fn measure(&self, u: &DVec) -> Result<PlantMeasurement, CoreError>;
    /// Noise-free plant cost and constraints (for traces and oracles).
    fn plant_cost_constraints(&self, u: &DVec) -> Result<(f64, DVec), CoreError>;
}

/// How gradients are estimated on the plant.
#[derive(Debug, Clone)]
pub enum ProbeScheme {
    /// Central differences with the default relative step.
    Central,
    /// Forward differences with designed per-axis probe sizes (the
    /// designed-experiment pipeline of the simple autopilot).
    Forward { deltas: Vec<f64> },
}

/// Finite-difference probe on a noise-free simulated plant.
pub struct FdProbe<'a> {
    pub plant: &'a PlantInterface,
    pub spec: &'a ProblemSpec,
    pub d_measured: DVec,
    pub d_unmeasured: DVec,
    pub scheme: ProbeScheme,
}

impl<'a> FdProbe<'a> {
    pub fn new(plant: &'a PlantInterface, spec: &'a ProblemSpec) -> Self {
        FdProbe {
            plant,
            spec,
            d_measured: DVector::zeros(plant.plant.n_d_measured()),
            d_unmeasured: DVector::zeros(plant.plant.n_d_unmeasured()),
            scheme: ProbeScheme::Central,
        }
    }

    fn outputs_at(&self, u: &DVec) -> Result<DVec, CoreError> {
        self.plant.eval_clean(u, &self.d_measured, &self.d_unmeasured)
    }
}

impl<'a> PlantProbe for FdProbe<'a> {
    fn measure(&self, u: &DVec) -> Result<PlantMeasurement, CoreError> {
        let n_u = u.len();
        let y0 = self.outputs_at(u)?;
        let phi0 = (self.spec.cost)(u, &y0);
        let g0 = (self.spec.constraints)(u, &y0);
        let mut out_jac = DMatrix::zeros(self.spec.n_y, n_u);
        let mut cost_grad = DVector::zeros(n_u);
        let mut g_jac = DMatrix::zeros(self.spec.n_g, n_u);
        match &self.scheme {
            ProbeScheme::Central => {
                let h = rto_core::default_fd_step(u);
                let mut up = u.clone();
                let mut um = u.clone();
                for j in 0..n_u {
                    up[j] = u[j] + h[j];
                    um[j] = u[j] - h[j];
                    let yp = self.outputs_at(&up)?;
                    let ym = self.outputs_at(&um)?;
                    for r in 0..self.spec.n_y {
                        out_jac[(r, j)] = (yp[r] - ym[r]) / (2.0 * h[j]);
                    }
                    let cp = (self.spec.cost)(&up, &yp);
                    let cm = (self.spec.cost)(&um, &ym);
                    cost_grad[j] = (cp - cm) / (2.0 * h[j]);
                    let gp = (self.spec.constraints)(&up, &yp);
                    let gm = (self.spec.constraints)(&um, &ym);
                    for r in 0..self.spec.n_g {
                        g_jac[(r, j)] = (gp[r] - gm[r]) / (2.0 * h[j]);
                    }
                    up[j] = u[j];
                    um[j] = u[j];
                }
            }
            ProbeScheme::Forward { deltas } => {
                CoreError::check_dim(n_u, deltas.len(), "probe deltas")?;
                let mut up = u.clone();
                for j in 0..n_u {
                    let d = deltas[j];
                    if d <= 0.0 {
                        return Err(CoreError::InvalidArgument(
                            "probe delta must be positive".into(),
                        ));
                    }
                    up[j] = u[j] + d;
                    let yp = self.outputs_at(&up)?;
                    for r in 0..self.spec.n_y {
                        out_jac[(r, j)] = (yp[r] - y0[r]) / d;
                    }
                    let cp = (self.spec.cost)(&up, &yp);
                    cost_grad[j] = (cp - phi0) / d;
                    let gp = (self.spec.constraints)(&up, &yp);
                    for r in 0..self.spec.n_g {
                        g_jac[(r, j)] = (gp[r] - g0[r]) / d;
                    }
                    up[j] = u[j];
                }
            }
        }
        Ok(PlantMeasurement {
            cost_value: phi0,
            cost_gradient: cost_grad,
            constraint_values: g0,
            constraint_jacobian: g_jac,
            outputs: y0,
            output_jacobian: out_jac,
        })
    }

    fn plant_cost_constraints(&self, u: &DVec) -> Result<(f64, DVec), CoreError> {
        let y = self.outputs_at(u)?;
        Ok(((self.spec.cost)(u, &y), (self.spec.constraints)(u, &y)))
    }
}
