use nalgebra::{DMatrix, DVector};
use rto_core::{DMat, DVec};
use rto_gp::GpPrior;

use crate::error::AspError;

/// Raw steady-state samples of one experiment.
#[derive(Debug, Clone)]
pub struct MeasurementSequence {
    pub experiment: usize,
    pub x_hat: DVec,
    /// One sample per row time, each of length n_y.
    pub samples: Vec<DVec>,
    pub timestamps: Vec<f64>,
}

impl MeasurementSequence {
    pub fn validate(&self) -> Result<(), AspError> {
        if self.samples.len() != self.timestamps.len() {
            return Err(AspError::Dimension("samples vs timestamps".into()));
        }
        for w in self.timestamps.windows(2) {
            if w[1] <= w[0] {
                return Err(AspError::Dimension(
                    "timestamps must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Per-experiment statistics: sample mean, its uncertainty (the noise
/// covariance shrunk by the sample count), and the mean timestamp.
#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub experiment: usize,
    pub x_hat: DVec,
    pub y_mean: DVec,
    /// Diagonal of the mean-uncertainty covariance S = N / count.
    pub mean_var: DVec,
    /// Diagonal of the per-sample noise covariance N.
    pub noise_var: DVec,
    pub t_mean: f64,
    /// Input mean uncertainty (zero at desk scale unless configured).
    pub sigma_x: DMat,
}

/// Bayesian mean of the samples: the posterior over the de-noised output is
/// centered on the sample average with covariance N/(n+1); an unknown noise
/// covariance is replaced by the experimental estimate.
pub fn summarize_experiment(
    seq: &MeasurementSequence,
    noise_known: Option<&DVec>,
) -> Result<ExperimentSummary, AspError> {
    seq.validate()?;
    let count = seq.samples.len();
    if count == 0 {
        return Err(AspError::InsufficientData("no samples".into()));
    }
    let n_y = seq.samples[0].len();
    let mut mean = DVector::zeros(n_y);
    for s in &seq.samples {
        if s.len() != n_y {
            return Err(AspError::Dimension("inconsistent sample widths".into()));
        }
        mean += s;
    }
    mean /= count as f64;
    let noise_var = match noise_known {
        Some(n) => {
            if n.len() != n_y {
                return Err(AspError::Dimension("noise covariance width".into()));
            }
            n.clone()
        }
        None => {
            if count < 2 {
                return Err(AspError::InsufficientData(
                    "cannot estimate the noise covariance from one sample".into(),
                ));
            }
            let mut v = DVector::zeros(n_y);
            for s in &seq.samples {
                for j in 0..n_y {
                    let d = s[j] - mean[j];
                    v[j] += d * d;
                }
            }
            v / count as f64
        }
    };
    let mean_var = &noise_var / count as f64;
    let t_mean = seq.timestamps.iter().sum::<f64>() / count as f64;
    Ok(ExperimentSummary {
        experiment: seq.experiment,
        x_hat: seq.x_hat.clone(),
        y_mean: mean,
        mean_var,
        noise_var,
        t_mean,
        sigma_x: DMatrix::zeros(seq.x_hat.len(), seq.x_hat.len()),
    })
}

/// Keep exactly the last `n_u + 1` summaries: all observations before
/// experiment `l - n_u` are considered outdated.
pub fn simple_consistency_window(
    summaries: &[ExperimentSummary],
    n_u: usize,
) -> Vec<ExperimentSummary> {
    let keep = n_u + 1;
    let start = summaries.len().saturating_sub(keep);
    summaries[start..].to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtpVerdict {
    Consistent,
    Transition,
}

/// Surprise test on a new observation: if any monitored output's
/// two-sigma segment is disjoint from the prediction's two-sigma segment,
/// a consistent-time-period transition is declared. Symmetric in
/// observation and prediction.
pub fn ctp_check(observed: &DVec, observed_var: &DVec, predicted: &DVec, predicted_var: &DVec) -> CtpVerdict {
    for j in 0..observed.len() {
        let (a, sa) = (observed[j], observed_var[j].max(0.0).sqrt());
        let (b, sb) = (predicted[j], predicted_var[j].max(0.0).sqrt());
        if a + 2.0 * sa < b - 2.0 * sb || b + 2.0 * sb < a - 2.0 * sa {
            return CtpVerdict::Transition;
        }
    }
    CtpVerdict::Consistent
}

/// Finite-difference compression of a designed probe set: the oldest record
/// is the value, the following ones give one directional-derivative column
/// each (slope along the unit displacement).
pub fn simple_compress(
    window: &[ExperimentSummary],
) -> Result<(DVec, DVec, DMat), AspError> {
    if window.len() < 2 {
        return Err(AspError::InsufficientData(
            "at least two records required for a gradient".into(),
        ));
    }
    let base = &window[0];
    let n_y = base.y_mean.len();
    let n_cols = window.len() - 1;
    let mut grad = DMatrix::zeros(n_y, n_cols);
    for (c, rec) in window.iter().skip(1).enumerate() {
        let dx = &rec.x_hat - &base.x_hat;
        let nrm = dx.norm();
        if nrm < 1e-300 {
            return Err(AspError::DuplicateProbe {
                a: base.experiment,
                b: rec.experiment,
            });
        }
        for r in 0..n_y {
            grad[(r, c)] = (rec.y_mean[r] - base.y_mean[r]) / nrm;
        }
    }
    Ok((base.x_hat.clone(), base.y_mean.clone(), grad))
}

/// Consider the age of the plant a measured disturbance: augment inputs
/// with the timestamp and extend the prior with the drift length scale.
pub fn time_as_disturbance(
    records: &[(DVec, f64)],
    prior: &GpPrior,
    l_t: f64,
) -> (Vec<DVec>, GpPrior) {
    let augmented: Vec<DVec> = records
        .iter()
        .map(|(x, t)| {
            let mut z = DVector::zeros(x.len() + 1);
            for i in 0..x.len() {
                z[i] = x[i];
            }
            z[x.len()] = *t;
            z
        })
        .collect();
    let n = prior.kernel.lengthscales.len();
    let mut ls = DVector::zeros(n + 1);
    for i in 0..n {
        ls[i] = prior.kernel.lengthscales[i];
    }
    ls[n] = l_t;
    let mean = prior.mean.clone();
    let inner: std::sync::Arc<dyn Fn(&DVec) -> f64 + Send + Sync> =
        std::sync::Arc::new(move |z: &DVec| {
            let x = z.rows(0, z.len() - 1).into_owned();
            mean(&x)
        });
    (
        augmented,
        GpPrior::new(inner, prior.kernel.sigma_f2, ls),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn seq_of(values: Vec<f64>, x: f64) -> MeasurementSequence {
        MeasurementSequence {
            experiment: 0,
            x_hat: DVector::from_vec(vec![x]),
            timestamps: (0..values.len()).map(|i| i as f64).collect(),
            samples: values.into_iter().map(|v| DVector::from_vec(vec![v])).collect(),
        }
    }

    #[test]
    fn identical_samples_known_noise() {
        // 61 identical samples with unit noise: mean 5, mean variance 1/61.
        let seq = seq_of(vec![5.0; 61], 0.0);
        let s = summarize_experiment(&seq, Some(&DVector::from_vec(vec![1.0]))).unwrap();
        assert_eq!(s.y_mean[0], 5.0);
        assert_relative_eq!(s.mean_var[0], 1.0 / 61.0, epsilon = 1e-15);
    }

    #[test]
    fn constant_sequence_unknown_noise_is_zero() {
        let seq = seq_of(vec![2.5; 10], 0.0);
        let s = summarize_experiment(&seq, None).unwrap();
        assert_eq!(s.noise_var[0], 0.0);
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let seq = seq_of(vec![], 0.0);
        assert!(matches!(
            summarize_experiment(&seq, None),
            Err(AspError::InsufficientData(_))
        ));
    }

    #[test]
    fn window_keeps_last_records() {
        let recs: Vec<ExperimentSummary> = (0..5)
            .map(|i| summarize_experiment(&seq_of(vec![i as f64; 3], i as f64), Some(&DVector::from_vec(vec![1.0]))).unwrap())
            .collect();
        let w = simple_consistency_window(&recs, 2);
        assert_eq!(w.len(), 3);
        assert_eq!(w[0].y_mean[0], 2.0);
        // Fewer records than the window: all kept.
        let w2 = simple_consistency_window(&recs[..2], 3);
        assert_eq!(w2.len(), 2);
        // One append shifts the window by one.
        let mut recs2 = recs.clone();
        recs2.push(
            summarize_experiment(&seq_of(vec![9.0; 3], 9.0), Some(&DVector::from_vec(vec![1.0]))).unwrap(),
        );
        let w3 = simple_consistency_window(&recs2, 2);
        assert_eq!(w3[0].y_mean[0], 3.0);
    }

    #[test]
    fn ctp_overlap_and_disjoint() {
        let y = DVector::from_vec(vec![10.0]);
        let v = DVector::from_vec(vec![0.04]);
        assert_eq!(
            ctp_check(&y, &v, &y, &v),
            CtpVerdict::Consistent,
            "identical centers always overlap"
        );
        let far = DVector::from_vec(vec![5.0]);
        let v2 = DVector::from_vec(vec![0.09]);
        assert_eq!(ctp_check(&y, &v, &far, &v2), CtpVerdict::Transition);
        // Symmetry.
        assert_eq!(ctp_check(&far, &v2, &y, &v), CtpVerdict::Transition);
    }

    #[test]
    fn linear_function_slope_recovered() {
        // f_p = 2u probed at 1e-7 spacing: slope 2 within 1e-6.
        let base = summarize_experiment(&seq_of(vec![2.0 * 0.3; 2], 0.3), Some(&DVector::from_vec(vec![0.0]))).unwrap();
        let probe = summarize_experiment(
            &seq_of(vec![2.0 * (0.3 + 1e-7); 2], 0.3 + 1e-7),
            Some(&DVector::from_vec(vec![0.0])),
        )
        .unwrap();
        let (_, y, g) = simple_compress(&[base, probe]).unwrap();
        assert_relative_eq!(y[0], 0.6, epsilon = 1e-12);
        assert_relative_eq!(g[(0, 0)], 2.0, epsilon = 1e-6);
    }

    #[test]
    fn duplicate_probe_is_detected() {
        let a = summarize_experiment(&seq_of(vec![1.0; 2], 0.3), Some(&DVector::from_vec(vec![0.0]))).unwrap();
        let b = summarize_experiment(&seq_of(vec![1.1; 2], 0.3), Some(&DVector::from_vec(vec![0.0]))).unwrap();
        assert!(matches!(
            simple_compress(&[a, b]),
            Err(AspError::DuplicateProbe { .. })
        ));
    }

    #[test]
    fn infinite_drift_lengthscale_changes_nothing() {
        use std::sync::Arc;
        let prior = GpPrior::new(
            Arc::new(|x: &DVec| x[0] * 2.0),
            1.0,
            DVector::from_vec(vec![1.0]),
        );
        let records = vec![(DVector::from_vec(vec![0.5]), 100.0)];
        let (aug, p2) = time_as_disturbance(&records, &prior, 1e15);
        assert_eq!(aug[0].len(), 2);
        // Kernel between two epochs far apart stays ~unchanged.
        let a = DVector::from_vec(vec![0.5, 0.0]);
        let b = DVector::from_vec(vec![0.5, 1e6]);
        let k = rto_gp::kernel(&p2.kernel, &a, &b, rto_gp::KernelKind::Ff, None, None);
        assert_relative_eq!(k, 1.0, epsilon = 1e-6);
        assert_eq!(p2.mean_value(&a), 1.0);
    }
}
