use super::graph::{BrainGraph, GraphMeta, TimeSeriesRecord};
use super::{GraphDataError, Result};

/// Symmetric correlation matrix with unit diagonal.
#[derive(Debug, Clone)]
pub struct CorrMatrix {
    pub n: usize,
    pub values: Vec<f64>,
}

impl CorrMatrix {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(GraphDataError::Consistency(format!(
                "correlation matrix is {} values, expected {n}x{n}",
                values.len()
            )));
        }
        Ok(Self { n, values })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    fn check_symmetric_unit_diagonal(&self) -> Result<()> {
        for i in 0..self.n {
            if (self.get(i, i) - 1.0).abs() > 1e-9 {
                return Err(GraphDataError::Consistency(format!(
                    "diagonal entry ({i},{i}) = {} is not 1",
                    self.get(i, i)
                )));
            }
            for j in (i + 1)..self.n {
                if (self.get(i, j) - self.get(j, i)).abs() > 1e-9 {
                    return Err(GraphDataError::Consistency(format!(
                        "correlation not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Pearson correlation between every pair of region time series.
pub fn pearson_from_timeseries(ts: &TimeSeriesRecord, regions: &[String]) -> Result<CorrMatrix> {
    let n = ts.n_regions;
    let t = ts.time_points;
    let mut means = vec![0.0; n];
    for r in 0..n {
        means[r] = (0..t).map(|k| ts.samples[k * n + r]).sum::<f64>() / t as f64;
    }
    let mut dev_norms = vec![0.0; n];
    for r in 0..n {
        let ss: f64 = (0..t)
            .map(|k| {
                let d = ts.samples[k * n + r] - means[r];
                d * d
            })
            .sum();
        if ss == 0.0 {
            let region = regions.get(r).cloned().unwrap_or_else(|| format!("#{r}"));
            return Err(GraphDataError::ConstantSeries { region });
        }
        dev_norms[r] = ss.sqrt();
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let mut cov = 0.0;
            for k in 0..t {
                cov += (ts.samples[k * n + i] - means[i]) * (ts.samples[k * n + j] - means[j]);
            }
            let r = (cov / (dev_norms[i] * dev_norms[j])).clamp(-1.0, 1.0);
            values[i * n + j] = r;
            values[j * n + i] = r;
        }
    }
    CorrMatrix::new(n, values)
}

/// Proportional thresholding: keep the ceil(keep_fraction · pairs)
/// strongest-|r| node pairs as edges. Ties break on (smaller i, then smaller
/// j); exactly-zero correlations never become edges, so an identity
/// correlation matrix yields an empty graph.
pub fn threshold_adjacency(corr: &CorrMatrix, keep_fraction: f64) -> Result<Vec<u8>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(GraphDataError::Param(format!(
            "keep_fraction {keep_fraction} outside (0, 1]"
        )));
    }
    corr.check_symmetric_unit_diagonal()?;
    let n = corr.n;
    let mut pairs: Vec<(usize, usize, f64)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            pairs.push((i, j, corr.get(i, j).abs()));
        }
    }
    let total_pairs = pairs.len();
    let keep = ((keep_fraction * total_pairs as f64).ceil() as usize).min(total_pairs);
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

    let mut adjacency = vec![0u8; n * n];
    for &(i, j, w) in pairs.iter().take(keep) {
        if w == 0.0 {
            break; // sorted descending: everything after is zero too
        }
        adjacency[i * n + j] = 1;
        adjacency[j * n + i] = 1;
    }
    Ok(adjacency)
}

/// Assemble a graph: full correlation rows as node features, thresholded
/// adjacency, region names, label, and dataset context.
pub fn build_graph(
    corr: &CorrMatrix,
    keep_fraction: f64,
    regions: &[String],
    label: usize,
    meta: GraphMeta,
) -> Result<BrainGraph> {
    if regions.len() != corr.n {
        return Err(GraphDataError::Consistency(format!(
            "{} region names for a {}-node correlation matrix",
            regions.len(),
            corr.n
        )));
    }
    let adjacency = threshold_adjacency(corr, keep_fraction)?;
    let g = BrainGraph {
        n: corr.n,
        feat_dim: corr.n,
        features: corr.values.clone(),
        adjacency,
        regions: regions.to_vec(),
        label,
        meta,
    };
    g.validate()?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::regions::region_names;

    fn ts(cols: &[&[f64]]) -> TimeSeriesRecord {
        let t = cols[0].len();
        let n = cols.len();
        let mut samples = vec![0.0; t * n];
        for (r, col) in cols.iter().enumerate() {
            for (k, v) in col.iter().enumerate() {
                samples[k * n + r] = *v;
            }
        }
        TimeSeriesRecord::new("s".into(), t, n, samples).unwrap()
    }

    #[test]
    fn perfect_linear_relation_gives_unit_correlation() {
        let rec = ts(&[&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]]);
        let c = pearson_from_timeseries(&rec, &region_names(2)).unwrap();
        assert!((c.get(0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_anticorrelation() {
        let rec = ts(&[&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]]);
        let c = pearson_from_timeseries(&rec, &region_names(2)).unwrap();
        assert!((c.get(0, 1) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_formula_direct_case() {
        // cols [1,2,3] and [1,3,2]: r = 0.5 by direct evaluation
        let rec = ts(&[&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]]);
        let c = pearson_from_timeseries(&rec, &region_names(2)).unwrap();
        assert!((c.get(0, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_column_names_the_region() {
        let rec = ts(&[&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]]);
        let err = pearson_from_timeseries(&rec, &region_names(2)).unwrap_err();
        match err {
            GraphDataError::ConstantSeries { region } => assert_eq!(region, "Precentral_R"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn pearson_invariant_under_positive_affine_transform() {
        let rec = ts(&[&[1.0, 4.0, 2.0, 8.0], &[0.3, -1.0, 2.5, 1.1]]);
        let base = pearson_from_timeseries(&rec, &region_names(2)).unwrap();
        // scale column 0 by 3.7, shift by -2; scale column 1 by 0.5, shift 10
        let rec2 = ts(&[
            &[1.0 * 3.7 - 2.0, 4.0 * 3.7 - 2.0, 2.0 * 3.7 - 2.0, 8.0 * 3.7 - 2.0],
            &[0.3 * 0.5 + 10.0, -1.0 * 0.5 + 10.0, 2.5 * 0.5 + 10.0, 1.1 * 0.5 + 10.0],
        ]);
        let scaled = pearson_from_timeseries(&rec2, &region_names(2)).unwrap();
        assert!((base.get(0, 1) - scaled.get(0, 1)).abs() < 1e-12);
    }

    fn corr3(r01: f64, r02: f64, r12: f64) -> CorrMatrix {
        CorrMatrix::new(
            3,
            vec![1.0, r01, r02, r01, 1.0, r12, r02, r12, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn keep_fraction_one_gives_complete_graph() {
        let c = corr3(0.5, -0.3, 0.1);
        let a = threshold_adjacency(&c, 1.0).unwrap();
        let edge_count: u32 = a.iter().map(|v| u32::from(*v)).sum::<u32>() / 2;
        assert_eq!(edge_count, 3);
        for i in 0..3 {
            assert_eq!(a[i * 3 + i], 0);
        }
    }

    #[test]
    fn ninety_nodes_at_point2_gives_801_edges() {
        // 90*89/2 = 4005 pairs, ceil(0.2*4005) = 801
        let n = 90;
        let mut values = vec![0.0; n * n];
        let mut w = 0.001;
        for i in 0..n {
            values[i * n + i] = 1.0;
            for j in (i + 1)..n {
                w += 1e-4; // distinct nonzero magnitudes
                values[i * n + j] = w % 0.99;
                values[j * n + i] = w % 0.99;
            }
        }
        let c = CorrMatrix::new(n, values).unwrap();
        let a = threshold_adjacency(&c, 0.2).unwrap();
        let edges: u32 = a.iter().map(|v| u32::from(*v)).sum::<u32>() / 2;
        assert_eq!(edges, 801);
    }

    #[test]
    fn single_kept_edge_is_the_strongest_pair() {
        // |r01| > |r02| > |r12|, keep 1 of 3 pairs
        let c = corr3(-0.9, 0.5, 0.2);
        let a = threshold_adjacency(&c, 1.0 / 3.0).unwrap();
        assert_eq!(a[1], 1); // (0,1)
        assert_eq!(a[2], 0);
        assert_eq!(a[5], 0);
    }

    #[test]
    fn ranking_matches_brute_force_on_random_matrices() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(404);
        for _ in 0..50 {
            let n = rng.random_range(3..10);
            let mut values = vec![0.0; n * n];
            for i in 0..n {
                values[i * n + i] = 1.0;
                for j in (i + 1)..n {
                    let r: f64 = rng.random_range(-1.0..1.0);
                    values[i * n + j] = r;
                    values[j * n + i] = r;
                }
            }
            let c = CorrMatrix::new(n, values).unwrap();
            let kf = rng.random_range(0.1..1.0);
            let a = threshold_adjacency(&c, kf).unwrap();

            // brute force: sort all pairs, keep top ceil(kf * P) nonzero
            let mut pairs = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    pairs.push((i, j, c.get(i, j).abs()));
                }
            }
            pairs.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
            let keep = (kf * pairs.len() as f64).ceil() as usize;
            for (rank, &(i, j, w)) in pairs.iter().enumerate() {
                let expected = u8::from(rank < keep && w > 0.0);
                assert_eq!(a[i * n + j], expected, "pair ({i},{j}) rank {rank}");
            }
        }
    }

    #[test]
    fn threshold_invariant_under_positive_scaling() {
        // rank-based selection only sees relative magnitudes; scaling the
        // off-diagonal mass uniformly must not change the edge set
        let c = corr3(0.8, -0.4, 0.2);
        let scaled = corr3(0.4, -0.2, 0.1);
        let a = threshold_adjacency(&c, 0.5).unwrap();
        let b = threshold_adjacency(&scaled, 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_correlation_builds_empty_graph_with_identity_features() {
        let n = 4;
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
        }
        let c = CorrMatrix::new(n, values).unwrap();
        let meta = GraphMeta {
            dataset: "synthetic".into(),
            task: "demo".into(),
            label_names: vec!["A".into(), "B".into()],
            subject: "s0".into(),
        };
        let g = build_graph(&c, 0.5, &region_names(n), 0, meta).unwrap();
        assert!(g.edges().is_empty());
        for i in 0..n {
            let row = g.feature_row(i);
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn invalid_keep_fraction_rejected() {
        let c = corr3(0.5, 0.4, 0.3);
        assert!(threshold_adjacency(&c, 0.0).is_err());
        assert!(threshold_adjacency(&c, 1.5).is_err());
    }
}
