use nalgebra::DMatrix;
use rand::Rng;
use rto_core::DVec;
use rto_gp::{GpDataset, GpPosterior, GpPrior};

use crate::error::AspError;

/// Beyond this cluster size the re-regression aggregates the old members
/// into their fitted value/trend rows instead of refitting them all.
const AGGREGATION_THRESHOLD: usize = 25;

/// One validated experiment record entering the compressor: input, one
/// value per output, one measurement variance per output.
#[derive(Debug, Clone)]
pub struct AspRecord {
    pub x: DVec,
    pub y: DVec,
    pub sigma2: DVec,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowKind {
    Value,
    Derivative { direction: DVec },
}

/// One stored row of the compressed database (per output channel).
#[derive(Debug, Clone)]
pub struct CompressedRow {
    pub x: DVec,
    pub kind: RowKind,
    pub value: f64,
    pub variance: f64,
}

/// One rectangle cluster: its center (a former candidate), the member
/// records, and the fitted rows per output.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub center: DVec,
    pub members: Vec<AspRecord>,
    /// Fitted rows per output channel.
    pub rows: Vec<Vec<CompressedRow>>,
    /// True when the value row was dropped (fit no better than the prior).
    pub value_dropped: Vec<bool>,
}

/// The compressed database: every record belongs to exactly one rectangle,
/// each contributing a mean and the retained directional derivatives.
#[derive(Debug, Clone)]
pub struct CompressedDatabase {
    pub clusters: Vec<Cluster>,
    pub half_widths: DVec,
    pub gamma: f64,
}

impl CompressedDatabase {
    pub fn row_count(&self) -> usize {
        self.clusters
            .iter()
            .map(|c| c.rows.iter().map(|r| r.len()).sum::<usize>())
            .sum()
    }

    pub fn record_count(&self) -> usize {
        self.clusters.iter().map(|c| c.members.len()).sum()
    }

    /// Cluster index whose rectangle contains `x`, if any.
    pub fn containing(&self, x: &DVec) -> Option<usize> {
        self.clusters.iter().position(|c| in_rectangle(&c.center, x, &self.half_widths))
    }

    /// Assemble the per-output dataset feeding the model-data combiner.
    pub fn dataset_for_output(&self, j: usize) -> GpDataset {
        let mut d = GpDataset::new();
        for c in &self.clusters {
            for row in &c.rows[j] {
                match &row.kind {
                    RowKind::Value => d.push_value(row.x.clone(), row.value, row.variance),
                    RowKind::Derivative { direction } => d.push_derivative(
                        row.x.clone(),
                        direction.clone(),
                        row.value,
                        row.variance,
                    ),
                }
            }
        }
        d
    }
}

fn in_rectangle(center: &DVec, x: &DVec, half_widths: &DVec) -> bool {
    x.iter()
        .zip(center.iter())
        .zip(half_widths.iter())
        .all(|((xi, ci), a)| (xi - ci).abs() <= a / 2.0 + 1e-12)
}

/// Joint value/gradient fit of one cluster for one output, evaluated at the
/// cluster center; returns the stored rows after the retention test.
fn regress_cluster_output(
    center: &DVec,
    members: &[AspRecord],
    extra_rows: &[CompressedRow],
    prior: &GpPrior,
    gamma: f64,
    output: usize,
) -> Result<(Vec<CompressedRow>, bool), AspError> {
    let mut data = GpDataset::new();
    for m in members {
        data.push_value(m.x.clone(), m.y[output], m.sigma2[output]);
    }
    for r in extra_rows {
        match &r.kind {
            RowKind::Value => data.push_value(r.x.clone(), r.value, r.variance),
            RowKind::Derivative { direction } => {
                data.push_derivative(r.x.clone(), direction.clone(), r.value, r.variance)
            }
        }
    }
    let post = GpPosterior::fit(prior.clone(), data)?;
    let (mean, cov) = post.predict_value_and_gradient(center);
    let n_x = center.len();
    let alpha = mean[0];
    let sigma_alpha2 = cov[(0, 0)].max(0.0);
    let beta = mean.rows(1, n_x).into_owned();
    let sigma_beta = cov.view((1, 1), (n_x, n_x)).into_owned();

    let mut rows = Vec::new();
    let sigma_f2 = prior.kernel.sigma_f2;
    // The mean is stored unless its posterior is no better than the prior.
    let dropped = sigma_alpha2 > sigma_f2;
    if !dropped {
        rows.push(CompressedRow {
            x: center.clone(),
            kind: RowKind::Value,
            value: alpha,
            variance: sigma_alpha2,
        });
    }
    // Retention test: keep the directional derivatives along eigenvectors
    // of (sigma_f^2 L - gamma Sigma_beta) with positive eigenvalues.
    let l = DMatrix::from_diagonal(&prior.kernel.l_diag());
    let test = l * sigma_f2 - &sigma_beta * gamma;
    let sym = 0.5 * (&test + test.transpose());
    let eig = sym.symmetric_eigen();
    for (idx, lam) in eig.eigenvalues.iter().enumerate() {
        if *lam > 0.0 {
            let v = eig.eigenvectors.column(idx).into_owned();
            let slope = v.dot(&beta);
            let var = (v.transpose() * &sigma_beta * &v)[(0, 0)].max(0.0);
            rows.push(CompressedRow {
                x: center.clone(),
                kind: RowKind::Derivative { direction: v },
                value: slope,
                variance: var,
            });
        }
    }
    Ok((rows, dropped))
}

fn fit_cluster(
    center: &DVec,
    members: &[AspRecord],
    extra_rows_per_output: Option<&Vec<Vec<CompressedRow>>>,
    priors: &[GpPrior],
    gamma: f64,
) -> Result<Cluster, AspError> {
    let n_y = priors.len();
    let mut rows = Vec::with_capacity(n_y);
    let mut dropped = Vec::with_capacity(n_y);
    let empty: Vec<CompressedRow> = vec![];
    for j in 0..n_y {
        let extra = extra_rows_per_output.map(|e| e[j].as_slice()).unwrap_or(&empty);
        let (r, d) = regress_cluster_output(center, members, extra, &priors[j], gamma, j)?;
        rows.push(r);
        dropped.push(d);
    }
    Ok(Cluster {
        center: center.clone(),
        members: members.to_vec(),
        rows,
        value_dropped: dropped,
    })
}

/// Greedy random-candidate clustering followed by per-cluster Bayesian
/// regression: candidates are drawn from the unassigned records until the
/// candidate set empties, each seeding a rectangle of the given
/// half-widths.
pub fn cluster_and_regress<R: Rng>(
    records: &[AspRecord],
    priors: &[GpPrior],
    half_widths: &DVec,
    gamma: f64,
    rng: &mut R,
) -> Result<CompressedDatabase, AspError> {
    let mut db = CompressedDatabase {
        clusters: vec![],
        half_widths: half_widths.clone(),
        gamma,
    };
    let mut candidates: Vec<usize> = (0..records.len()).collect();
    let mut assigned = vec![false; records.len()];
    while !candidates.is_empty() {
        let pick = rng.gen_range(0..candidates.len());
        let seed_idx = candidates[pick];
        let center = records[seed_idx].x.clone();
        let members: Vec<AspRecord> = records
            .iter()
            .enumerate()
            .filter(|(i, r)| !assigned[*i] && in_rectangle(&center, &r.x, half_widths))
            .map(|(_, r)| r.clone())
            .collect();
        for (i, r) in records.iter().enumerate() {
            if !assigned[i] && in_rectangle(&center, &r.x, half_widths) {
                assigned[i] = true;
            }
        }
        candidates.retain(|i| !assigned[*i]);
        let cluster = fit_cluster(&center, &members, None, priors, gamma)?;
        db.clusters.push(cluster);
    }
    Ok(db)
}

/// Incremental update: a record inside an existing rectangle joins that
/// cluster (full refit for small clusters, aggregation beyond the
/// threshold); a record outside every rectangle seeds a new cluster.
pub fn incremental_compress(
    db: &mut CompressedDatabase,
    record: AspRecord,
    priors: &[GpPrior],
) -> Result<(), AspError> {
    match db.containing(&record.x) {
        Some(ci) => {
            let gamma = db.gamma;
            let cluster = &mut db.clusters[ci];
            cluster.members.push(record);
            if cluster.members.len() <= AGGREGATION_THRESHOLD {
                let refit = fit_cluster(&cluster.center.clone(), &cluster.members, None, priors, gamma)?;
                *cluster = refit;
            } else {
                // Aggregate: replace the old members by their fitted rows
                // and regress those together with the newcomer.
                let old_rows = cluster.rows.clone();
                let newcomer = cluster.members.last().unwrap().clone();
                let refit = fit_cluster(
                    &cluster.center.clone(),
                    std::slice::from_ref(&newcomer),
                    Some(&old_rows),
                    priors,
                    gamma,
                )?;
                let members = cluster.members.clone();
                *cluster = refit;
                cluster.members = members;
            }
            Ok(())
        }
        None => {
            let cluster = fit_cluster(&record.x.clone(), std::slice::from_ref(&record), None, priors, db.gamma)?;
            db.clusters.push(cluster);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::sync::Arc;

    fn flat_priors(n_y: usize, sigma_f2: f64, l: f64) -> Vec<GpPrior> {
        (0..n_y)
            .map(|_| {
                GpPrior::new(
                    Arc::new(|_x: &DVec| 0.0),
                    sigma_f2,
                    DVector::from_vec(vec![l]),
                )
            })
            .collect()
    }

    fn rec(x: f64, y: f64, s2: f64) -> AspRecord {
        AspRecord {
            x: DVector::from_vec(vec![x]),
            y: DVector::from_vec(vec![y]),
            sigma2: DVector::from_vec(vec![s2]),
            t: 0.0,
        }
    }

    #[test]
    fn one_rectangle_single_cluster() {
        let recs = vec![rec(0.0, 1.0, 1e-4), rec(0.05, 1.1, 1e-4), rec(-0.04, 0.9, 1e-4)];
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let db = cluster_and_regress(
            &recs,
            &flat_priors(1, 1.0, 1.0),
            &DVector::from_vec(vec![0.2]),
            4.0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(db.clusters.len(), 1);
        assert_eq!(db.record_count(), 3);
    }

    #[test]
    fn far_points_make_two_clusters_without_derivatives() {
        let recs = vec![rec(0.0, 1.0, 1e-4), rec(5.0, 2.0, 1e-4)];
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let db = cluster_and_regress(
            &recs,
            &flat_priors(1, 1.0, 1.0),
            &DVector::from_vec(vec![0.2]),
            4.0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(db.clusters.len(), 2);
        for c in &db.clusters {
            // A single datum pins no slope: the posterior slope variance
            // stays at the prior, so no derivative row survives gamma = 4.
            assert_eq!(
                c.rows[0]
                    .iter()
                    .filter(|r| matches!(r.kind, RowKind::Derivative { .. }))
                    .count(),
                0
            );
        }
    }

    #[test]
    fn linear_cluster_retains_the_slope() {
        // 7 noise-free points on a line: the retained derivative is the
        // true slope, and the retention test holds with gamma = 4.
        let slope = 0.8;
        let recs: Vec<AspRecord> = (0..7)
            .map(|i| {
                let x = -0.09 + 0.03 * i as f64;
                rec(x, slope * x, 1e-10)
            })
            .collect();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let db = cluster_and_regress(
            &recs,
            &flat_priors(1, 1.0, 1.0),
            &DVector::from_vec(vec![0.4]),
            4.0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(db.clusters.len(), 1);
        let derivs: Vec<&CompressedRow> = db.clusters[0].rows[0]
            .iter()
            .filter(|r| matches!(r.kind, RowKind::Derivative { .. }))
            .collect();
        assert_eq!(derivs.len(), 1, "one retained direction in 1-D");
        let got = match &derivs[0].kind {
            RowKind::Derivative { direction } => derivs[0].value * direction[0].signum(),
            _ => unreachable!(),
        };
        assert!((got.abs() - slope).abs() < 1e-3, "slope {got} vs {slope}");
        // Retention exactness: retained variance beats the prior by gamma.
        let prior_slope_var = 1.0; // sigma_f^2 / l^2
        assert!(4.0 * derivs[0].variance <= prior_slope_var + 1e-12);
    }

    #[test]
    fn incremental_join_and_new_cluster() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let priors = flat_priors(1, 1.0, 1.0);
        let recs = vec![rec(0.0, 1.0, 1e-4)];
        let mut db = cluster_and_regress(
            &recs,
            &priors,
            &DVector::from_vec(vec![0.2]),
            4.0,
            &mut rng,
        )
        .unwrap();
        incremental_compress(&mut db, rec(0.05, 1.05, 1e-4), &priors).unwrap();
        assert_eq!(db.clusters.len(), 1, "inside the rectangle joins");
        incremental_compress(&mut db, rec(3.0, 0.2, 1e-4), &priors).unwrap();
        assert_eq!(db.clusters.len(), 2, "outside seeds a new cluster");
    }

    #[test]
    fn incremental_equals_full_refit_of_the_partition() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let priors = flat_priors(1, 1.0, 1.0);
        let mut db = cluster_and_regress(
            &[rec(0.0, 1.0, 1e-4)],
            &priors,
            &DVector::from_vec(vec![0.3]),
            4.0,
            &mut rng,
        )
        .unwrap();
        for i in 1..6 {
            incremental_compress(&mut db, rec(0.02 * i as f64, 1.0 + 0.1 * i as f64, 1e-4), &priors)
                .unwrap();
        }
        // Recompute each cluster from scratch on the same membership.
        for c in &db.clusters {
            let refit = fit_cluster(&c.center, &c.members, None, &priors, 4.0).unwrap();
            assert_eq!(refit.rows[0].len(), c.rows[0].len());
            for (a, b) in refit.rows[0].iter().zip(&c.rows[0]) {
                assert!((a.value - b.value).abs() < 1e-6);
            }
        }
    }
}
