use serde::{Deserialize, Serialize};

use super::{GraphDataError, Result};

/// Dataset/task context attached to every graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub dataset: String,
    pub task: String,
    /// Label strings indexed by class, e.g. ["HC", "ASD"].
    pub label_names: Vec<String>,
    pub subject: String,
}

/// One subject's connectivity graph.
///
/// `features` is the full correlation row per node (feat_dim = n by
/// default); `adjacency` is symmetric binary with a zero diagonal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BrainGraph {
    pub n: usize,
    pub feat_dim: usize,
    pub features: Vec<f64>,
    pub adjacency: Vec<u8>,
    pub regions: Vec<String>,
    pub label: usize,
    pub meta: GraphMeta,
}

impl BrainGraph {
    pub fn validate(&self) -> Result<()> {
        if self.features.len() != self.n * self.feat_dim {
            return Err(GraphDataError::Consistency(format!(
                "feature matrix is {} values, expected {}x{}",
                self.features.len(),
                self.n,
                self.feat_dim
            )));
        }
        if self.adjacency.len() != self.n * self.n {
            return Err(GraphDataError::Consistency("adjacency size mismatch".into()));
        }
        if self.regions.len() != self.n {
            return Err(GraphDataError::Consistency(format!(
                "{} region names for {} nodes",
                self.regions.len(),
                self.n
            )));
        }
        {
            let mut seen = std::collections::HashSet::new();
            for r in &self.regions {
                if !seen.insert(r) {
                    return Err(GraphDataError::Consistency(format!("duplicate region name '{r}'")));
                }
            }
        }
        if self.label > 1 {
            return Err(GraphDataError::Consistency(format!("label {} not binary", self.label)));
        }
        for i in 0..self.n {
            if self.adjacency[i * self.n + i] != 0 {
                return Err(GraphDataError::Consistency(format!("self-loop at node {i}")));
            }
            for j in 0..self.n {
                let a = self.adjacency[i * self.n + j];
                if a > 1 {
                    return Err(GraphDataError::Consistency("adjacency entry outside {0,1}".into()));
                }
                if a != self.adjacency[j * self.n + i] {
                    return Err(GraphDataError::Consistency(format!(
                        "adjacency not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Upper-triangle edge list (i < j), in (i, j) order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.adjacency[i * self.n + j] != 0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j] != 0
    }

    pub fn feature_row(&self, node: usize) -> &[f64] {
        &self.features[node * self.feat_dim..(node + 1) * self.feat_dim]
    }

    /// Mean node feature (the prompt-side X^d → X^1 reduction).
    pub fn mean_feature(&self, node: usize) -> f64 {
        let row = self.feature_row(node);
        row.iter().sum::<f64>() / row.len() as f64
    }
}

/// T time points per region, column-per-region.
#[derive(Debug, Clone)]
pub struct TimeSeriesRecord {
    pub subject: String,
    pub time_points: usize,
    pub n_regions: usize,
    pub samples: Vec<f64>,
}

impl TimeSeriesRecord {
    pub fn new(subject: String, time_points: usize, n_regions: usize, samples: Vec<f64>) -> Result<Self> {
        if time_points < 3 {
            return Err(GraphDataError::Param(format!(
                "time series needs T >= 3 points, got {time_points}"
            )));
        }
        if samples.len() != time_points * n_regions {
            return Err(GraphDataError::Consistency(format!(
                "time series is {} values, expected {}x{}",
                samples.len(),
                time_points,
                n_regions
            )));
        }
        Ok(Self { subject, time_points, n_regions, samples })
    }

    pub fn column(&self, region: usize) -> Vec<f64> {
        (0..self.time_points)
            .map(|t| self.samples[t * self.n_regions + region])
            .collect()
    }
}
