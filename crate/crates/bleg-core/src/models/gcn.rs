//! Graph convolutional encoder: per layer Â·X·W, batch norm over nodes,
//! GeLU, dropout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::graphdata::BrainGraph;
use crate::numerics::{ParamSet, Tape, Tensor, BN_EPS, BN_MOMENTUM};

use super::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GcnConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub use_batch_norm: bool,
    pub use_activation: bool,
}

impl GcnConfig {
    pub fn paper_default(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: 64,
            layers: 3,
            dropout: 0.3,
            use_batch_norm: true,
            use_activation: true,
        }
    }
}

/// Â = D^{-1/2}(A + I)D^{-1/2}, degrees counted with the self-loop.
pub fn normalized_adjacency(g: &BrainGraph) -> Vec<f64> {
    let n = g.n;
    let mut degree = vec![1.0f64; n];
    for i in 0..n {
        for j in 0..n {
            if g.adjacency[i * n + j] != 0 {
                degree[i] += 1.0;
            }
        }
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut a_hat = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let a = if i == j { 1.0 } else { f64::from(g.adjacency[i * n + j]) };
            if a != 0.0 {
                a_hat[i * n + j] = a * inv_sqrt[i] * inv_sqrt[j];
            }
        }
    }
    a_hat
}

/// One bare graph-convolution: Â·X·W.
pub fn gcn_layer(tape: &Tape, a_hat: &Tensor, x: &Tensor, w: &Tensor) -> Result<Tensor> {
    Ok(tape.matmul(&tape.matmul(a_hat, x)?, w)?)
}

pub struct GnnEncoder {
    pub cfg: GcnConfig,
    pub params: ParamSet,
}

impl GnnEncoder {
    pub fn new(cfg: GcnConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for l in 0..cfg.layers {
            let in_dim = if l == 0 { cfg.input_dim } else { cfg.hidden };
            params.add_gaussian(&format!("gnn.layer{l}.weight"), vec![in_dim, cfg.hidden], 0.02, &mut rng)?;
            if cfg.use_batch_norm {
                params.add_ones(&format!("gnn.bn{l}.gamma"), vec![cfg.hidden], true)?;
                params.add_zeros(&format!("gnn.bn{l}.beta"), vec![cfg.hidden], true)?;
                params.add_zeros(&format!("gnn.bn{l}.running_mean"), vec![cfg.hidden], false)?;
                params.add_ones(&format!("gnn.bn{l}.running_var"), vec![cfg.hidden], false)?;
            }
        }
        Ok(Self { cfg, params })
    }

    /// Node embeddings (N×H). Training mode records dropout masks from `rng`
    /// and folds batch statistics into the running averages.
    pub fn forward<R: Rng>(
        &self,
        tape: &Tape,
        graph: &BrainGraph,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor> {
        let a_hat = Tensor::matrix(graph.n, graph.n, normalized_adjacency(graph))?;
        let mut h = Tensor::matrix(graph.n, graph.feat_dim, graph.features.clone())?;
        for l in 0..self.cfg.layers {
            let w = tape.param(&self.params, &format!("gnn.layer{l}.weight"))?;
            h = gcn_layer(tape, &a_hat, &h, &w)?;
            if self.cfg.use_batch_norm {
                let gamma = tape.param(&self.params, &format!("gnn.bn{l}.gamma"))?;
                let beta = tape.param(&self.params, &format!("gnn.bn{l}.beta"))?;
                h = match mode {
                    Mode::Train => {
                        let (out, stats) = tape.batch_norm_train(&h, &gamma, &beta, BN_EPS)?;
                        self.fold_running_stats(l, &stats.mean, &stats.var_unbiased);
                        out
                    }
                    Mode::Eval => {
                        let rm = self.params.require(&format!("gnn.bn{l}.running_mean"))?.values();
                        let rv = self.params.require(&format!("gnn.bn{l}.running_var"))?.values();
                        tape.batch_norm_eval(&h, &gamma, &beta, &rm, &rv, BN_EPS)?
                    }
                };
            }
            if self.cfg.use_activation {
                h = tape.gelu(&h)?;
            }
            if mode == Mode::Train && self.cfg.dropout > 0.0 {
                h = tape.dropout(&h, self.cfg.dropout, true, rng)?;
            }
        }
        Ok(h)
    }

    fn fold_running_stats(&self, layer: usize, mean: &[f64], var: &[f64]) {
        for (suffix, stat) in [("running_mean", mean), ("running_var", var)] {
            if let Some(p) = self.params.get(&format!("gnn.bn{layer}.{suffix}")) {
                p.update(|running| {
                    for (r, s) in running.iter_mut().zip(stat) {
                        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * s;
                    }
                });
            }
        }
    }
}
