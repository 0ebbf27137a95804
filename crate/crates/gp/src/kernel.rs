use nalgebra::DVector;
use rto_core::DVec;

/// Squared-exponential kernel with automatic relevance determination:
/// `k(xi, xj) = sigma_f^2 exp(-1/2 d' L d)` with `d = xi - xj` and `L`
/// diagonal with entries `1/l_i^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeArd {
    pub sigma_f2: f64,
    /// Length scales l_i (strictly positive).
    pub lengthscales: DVec,
}

impl SeArd {
    pub fn new(sigma_f2: f64, lengthscales: DVec) -> Self {
        assert!(sigma_f2 >= 0.0, "prior variance must be nonnegative");
        assert!(
            lengthscales.iter().all(|l| *l > 0.0),
            "length scales must be positive"
        );
        SeArd {
            sigma_f2,
            lengthscales,
        }
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Diagonal of `L` (inverse squared length scales).
    pub fn l_diag(&self) -> DVec {
        DVector::from_iterator(self.dim(), self.lengthscales.iter().map(|l| 1.0 / (l * l)))
    }

    /// Directional length scale: `l_v^-2 = v' L v`.
    pub fn directional_inv_len2(&self, v: &DVec) -> f64 {
        let l = self.l_diag();
        v.iter()
            .enumerate()
            .map(|(i, vi)| vi * vi * l[i])
            .sum::<f64>()
    }
}

/// Which covariance pair is requested: values and/or first directional
/// derivatives on either side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// cov(f(xi), f(xj))
    Ff,
    /// cov(f(xi), d_vj f(xj))
    Ff1,
    /// cov(d_vi f(xi), f(xj))
    F1f,
    /// cov(d_vi f(xi), d_vj f(xj))
    F1f1,
}

/// Closed-form SE-ARD covariances between values and directional
/// derivatives.
pub fn kernel(
    se: &SeArd,
    x_i: &DVec,
    x_j: &DVec,
    kind: KernelKind,
    v_i: Option<&DVec>,
    v_j: Option<&DVec>,
) -> f64 {
    let d = x_i - x_j;
    let l = se.l_diag();
    let quad: f64 = d
        .iter()
        .enumerate()
        .map(|(k, dk)| dk * dk * l[k])
        .sum();
    let k_ff = se.sigma_f2 * (-0.5 * quad).exp();
    match kind {
        KernelKind::Ff => k_ff,
        KernelKind::Ff1 => {
            let vj = v_j.expect("Ff1 needs v_j");
            let vld: f64 = vj
                .iter()
                .enumerate()
                .map(|(k, vk)| vk * l[k] * d[k])
                .sum();
            vld * k_ff
        }
        KernelKind::F1f => {
            let vi = v_i.expect("F1f needs v_i");
            let vld: f64 = vi
                .iter()
                .enumerate()
                .map(|(k, vk)| vk * l[k] * d[k])
                .sum();
            -vld * k_ff
        }
        KernelKind::F1f1 => {
            let vi = v_i.expect("F1f1 needs v_i");
            let vj = v_j.expect("F1f1 needs v_j");
            // v_j' ( L (I - d d' L) ) v_i * k_ff
            let ld_i: f64 = vi
                .iter()
                .enumerate()
                .map(|(k, vk)| vk * l[k] * d[k])
                .sum();
            let ld_j: f64 = vj
                .iter()
                .enumerate()
                .map(|(k, vk)| vk * l[k] * d[k])
                .sum();
            let vlv: f64 = vi
                .iter()
                .zip(vj.iter())
                .enumerate()
                .map(|(k, (a, b))| a * b * l[k])
                .sum();
            (vlv - ld_j * ld_i) * k_ff
        }
    }
}
