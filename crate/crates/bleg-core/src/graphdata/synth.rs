//! Planted-signal synthetic datasets: stand-in for the restricted fMRI
//! corpora, with a known ground-truth structure so downstream stages have a
//! verifiable oracle.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::correlation::{build_graph, pearson_from_timeseries};
use super::graph::{BrainGraph, GraphMeta, TimeSeriesRecord};
use super::regions::region_names;
use super::{GraphDataError, Result, DEFAULT_KEEP_FRACTION};
use crate::derive_seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_graphs: usize,
    pub n_nodes: usize,
    pub time_points: usize,
    /// Extra-correlated node pairs per class; the two sets must be disjoint.
    pub planted_edges: [Vec<(usize, usize)>; 2],
    /// Amplitude of the shared latent added to both endpoints of a planted
    /// edge. Zero produces two distributionally identical classes.
    pub signal_strength: f64,
    /// Standard deviation of the per-region noise.
    pub noise_level: f64,
    pub seed: u64,
    pub dataset_name: String,
    pub task_name: String,
    pub label_names: [String; 2],
    pub keep_fraction: f64,
}

impl SynthConfig {
    /// The reference dataset: 200 graphs, 90 nodes, strong planted signal
    /// (planted correlation ≈ s²/(s²+σ²) = 0.9).
    pub fn reference(seed: u64) -> Self {
        Self {
            n_graphs: 200,
            n_nodes: 90,
            time_points: 120,
            planted_edges: [
                vec![(0, 1), (2, 3), (4, 5), (6, 7), (8, 9), (10, 11)],
                vec![(45, 46), (47, 48), (49, 50), (51, 52), (53, 54), (55, 56)],
            ],
            signal_strength: 3.0,
            noise_level: 1.0,
            seed,
            dataset_name: "synthetic-fc".into(),
            task_name: "planted-signal classification".into(),
            label_names: ["HC".into(), "Patient".into()],
            keep_fraction: DEFAULT_KEEP_FRACTION,
        }
    }

    /// Same layout with the signal removed.
    pub fn zero_signal(seed: u64) -> Self {
        let mut cfg = Self::reference(seed);
        cfg.signal_strength = 0.0;
        cfg.dataset_name = "synthetic-fc-null".into();
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_graphs == 0 || self.n_nodes < 2 {
            return Err(GraphDataError::Param("need n_graphs >= 1 and n_nodes >= 2".into()));
        }
        if self.time_points < 3 {
            return Err(GraphDataError::Param("need time_points >= 3".into()));
        }
        if self.signal_strength < 0.0 || self.noise_level <= 0.0 {
            return Err(GraphDataError::Param(
                "signal_strength must be >= 0 and noise_level > 0".into(),
            ));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(GraphDataError::Param(format!(
                "keep_fraction {} outside (0, 1]",
                self.keep_fraction
            )));
        }
        let pair_count = self.n_nodes * (self.n_nodes - 1) / 2;
        let mut seen = std::collections::HashSet::new();
        for class_edges in &self.planted_edges {
            if class_edges.len() > pair_count {
                return Err(GraphDataError::Param(format!(
                    "{} planted edges exceed {pair_count} node pairs",
                    class_edges.len()
                )));
            }
            for &(i, j) in class_edges {
                if i >= j || j >= self.n_nodes {
                    return Err(GraphDataError::Param(format!(
                        "planted edge ({i},{j}) invalid for {} nodes (need i < j < n)",
                        self.n_nodes
                    )));
                }
                if !seen.insert((i, j)) {
                    return Err(GraphDataError::Param(format!(
                        "planted edge ({i},{j}) appears in both classes"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub regions: Vec<String>,
    pub records: Vec<TimeSeriesRecord>,
    pub graphs: Vec<BrainGraph>,
}

impl SynthDataset {
    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.label).collect()
    }
}

/// Generate a class-balanced labeled dataset. Labels alternate over the
/// graph index; each graph draws from its own derived seed, so generation
/// order (or parallel regeneration) cannot change the output.
pub fn generate_synthetic_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let regions = region_names(cfg.n_nodes);
    let mut records = Vec::with_capacity(cfg.n_graphs);
    let mut graphs = Vec::with_capacity(cfg.n_graphs);
    for g in 0..cfg.n_graphs {
        let label = g % 2;
        let subject = format!("sub-{g:04}");
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, &format!("graph-{g}")));
        let ts = sample_timeseries(cfg, label, &subject, &mut rng)?;
        let corr = pearson_from_timeseries(&ts, &regions)?;
        let meta = GraphMeta {
            dataset: cfg.dataset_name.clone(),
            task: cfg.task_name.clone(),
            label_names: cfg.label_names.to_vec(),
            subject: subject.clone(),
        };
        let graph = build_graph(&corr, cfg.keep_fraction, &regions, label, meta)?;
        records.push(ts);
        graphs.push(graph);
    }
    Ok(SynthDataset { config: cfg.clone(), regions, records, graphs })
}

fn sample_timeseries(
    cfg: &SynthConfig,
    label: usize,
    subject: &str,
    rng: &mut ChaCha12Rng,
) -> Result<TimeSeriesRecord> {
    let (t, n) = (cfg.time_points, cfg.n_nodes);
    let mut samples = vec![0.0; t * n];
    for v in samples.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = cfg.noise_level * z;
    }
    for &(i, j) in &cfg.planted_edges[label] {
        for k in 0..t {
            let latent: f64 = StandardNormal.sample(rng);
            samples[k * n + i] += cfg.signal_strength * latent;
            samples[k * n + j] += cfg.signal_strength * latent;
        }
    }
    TimeSeriesRecord::new(subject.to_string(), t, n, samples)
}

/// Ground-truth oracle: classify by the larger mean correlation over each
/// class's planted edge set. Returns (prediction, per-class scores).
pub fn planted_score(graph: &BrainGraph, planted: &[Vec<(usize, usize)>; 2]) -> (usize, [f64; 2]) {
    let mut scores = [0.0f64; 2];
    for (c, edges) in planted.iter().enumerate() {
        if edges.is_empty() {
            continue;
        }
        let sum: f64 = edges
            .iter()
            .map(|&(i, j)| graph.features[i * graph.feat_dim + j])
            .sum();
        scores[c] = sum / edges.len() as f64;
    }
    let prediction = usize::from(scores[1] > scores[0]);
    (prediction, scores)
}
