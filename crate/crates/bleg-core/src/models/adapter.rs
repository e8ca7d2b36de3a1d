//! Stage-3 trainables: the two-layer adapter over frozen GNN embeddings,
//! the residual + norm readout, and the classification head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{ParamSet, Tape, Tensor, BN_EPS};

use super::gcn::Mode;
use super::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub width: usize,
    pub dropout: f64,
    pub use_norm: bool,
}

impl AdapterConfig {
    pub fn paper_default(width: usize) -> Self {
        Self { width, dropout: 0.3, use_norm: true }
    }
}

/// Two-layer FFN (width-preserving) with node-dimension norm and GeLU
/// between the layers, plus the readout norm parameters.
pub struct Adapter {
    pub cfg: AdapterConfig,
    pub params: ParamSet,
}

impl Adapter {
    pub fn new(cfg: AdapterConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let h = cfg.width;
        p.add_gaussian("adapter.fc1.weight", vec![h, h], 0.02, &mut rng)?;
        p.add_zeros("adapter.fc1.bias", vec![h], true)?;
        p.add_ones("adapter.norm.gamma", vec![h], true)?;
        p.add_zeros("adapter.norm.beta", vec![h], true)?;
        p.add_gaussian("adapter.fc2.weight", vec![h, h], 0.02, &mut rng)?;
        p.add_zeros("adapter.fc2.bias", vec![h], true)?;
        p.add_ones("adapter.readout_norm.gamma", vec![h], true)?;
        p.add_zeros("adapter.readout_norm.beta", vec![h], true)?;
        Ok(Self { cfg, params: p })
    }

    /// Adapted node embeddings, same shape as the input (residual-ready).
    pub fn forward<R: Rng>(&self, tape: &Tape, x: &Tensor, mode: Mode, rng: &mut R) -> Result<Tensor> {
        let p = |name: &str| tape.param(&self.params, name);
        let mut h = tape.add_bias(&tape.matmul(x, &p("adapter.fc1.weight")?)?, &p("adapter.fc1.bias")?)?;
        if self.cfg.use_norm {
            h = tape.feature_norm(&h, &p("adapter.norm.gamma")?, &p("adapter.norm.beta")?, BN_EPS)?;
        }
        h = tape.gelu(&h)?;
        if mode == Mode::Train && self.cfg.dropout > 0.0 {
            h = tape.dropout(&h, self.cfg.dropout, true, rng)?;
        }
        Ok(tape.add_bias(&tape.matmul(&h, &p("adapter.fc2.weight")?)?, &p("adapter.fc2.bias")?)?)
    }

    /// Graph-level logits: mean over nodes of Norm(adapted + pre-adapter),
    /// the residual readout. `use_norm = false` drops the normalization
    /// (identity), which the zero-adapter contract tests rely on.
    pub fn readout(&self, tape: &Tape, adapted: &Tensor, pre_adapter: &Tensor, use_norm: bool) -> Result<Tensor> {
        if adapted.shape() != pre_adapter.shape() {
            return Err(super::ModelError::Numerics(
                crate::numerics::NumericsError::ShapeMismatch {
                    op: "readout",
                    details: format!("{:?} vs {:?}", adapted.shape(), pre_adapter.shape()),
                },
            ));
        }
        let summed = tape.add(adapted, pre_adapter)?;
        let normed = if use_norm {
            let gamma = tape.param(&self.params, "adapter.readout_norm.gamma")?;
            let beta = tape.param(&self.params, "adapter.readout_norm.beta")?;
            tape.feature_norm(&summed, &gamma, &beta, BN_EPS)?
        } else {
            summed
        };
        Ok(tape.mean_rows(&normed)?)
    }
}

/// Linear classification head H → 2.
pub struct ClassifierHead {
    pub params: ParamSet,
}

impl ClassifierHead {
    pub fn new(width: usize, classes: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        p.add_gaussian("head.weight", vec![width, classes], 0.02, &mut rng)?;
        p.add_zeros("head.bias", vec![classes], true)?;
        Ok(Self { params: p })
    }

    pub fn forward(&self, tape: &Tape, z: &Tensor) -> Result<Tensor> {
        let w = tape.param(&self.params, "head.weight")?;
        let b = tape.param(&self.params, "head.bias")?;
        Ok(tape.add_bias(&tape.matmul(z, &w)?, &b)?)
    }
}

/// Argmax with ties broken toward class 0.
pub fn classify(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate().skip(1) {
        if *v > logits[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adapter() -> Adapter {
        Adapter::new(AdapterConfig { width: 4, dropout: 0.0, use_norm: true }, 3).unwrap()
    }

    #[test]
    fn zero_adapter_with_norm_disabled_reduces_to_mean_of_pre_adapter() {
        let a = adapter();
        for name in ["adapter.fc1.weight", "adapter.fc1.bias", "adapter.fc2.weight", "adapter.fc2.bias"] {
            let p = a.params.require(name).unwrap();
            p.set(vec![0.0; p.numel()]);
        }
        let tape = Tape::inference();
        let x = Tensor::matrix(3, 4, (0..12).map(|i| i as f64 * 0.25).collect()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let z = a.forward(&tape, &x, Mode::Eval, &mut rng).unwrap();
        assert!(z.data().iter().all(|v| *v == 0.0));
        let out = a.readout(&tape, &z, &x, false).unwrap();
        let expected = tape.mean_rows(&x).unwrap();
        for (o, e) in out.data().iter().zip(expected.data()) {
            assert!((o - e).abs() < 1e-15);
        }
    }

    #[test]
    fn single_node_readout_equals_norm_of_sum() {
        let a = adapter();
        let tape = Tape::inference();
        let z = Tensor::matrix(1, 4, vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let x = Tensor::matrix(1, 4, vec![1.0, 1.0, -1.0, 3.0]).unwrap();
        let out = a.readout(&tape, &z, &x, true).unwrap();
        // one row: norm over the node dimension degenerates to beta (zeros)
        let gamma = tape.param(&a.params, "adapter.readout_norm.gamma").unwrap();
        let beta = tape.param(&a.params, "adapter.readout_norm.beta").unwrap();
        let summed = tape.add(&z, &x).unwrap();
        let normed = tape.feature_norm(&summed, &gamma, &beta, crate::numerics::BN_EPS).unwrap();
        assert_eq!(out.data(), normed.data());
    }

    #[test]
    fn random_readout_matches_brute_force() {
        use rand::Rng;
        let a = adapter();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let n = 5;
        let z_data: Vec<f64> = (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x_data: Vec<f64> = (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tape = Tape::inference();
        let z = Tensor::matrix(n, 4, z_data.clone()).unwrap();
        let x = Tensor::matrix(n, 4, x_data.clone()).unwrap();
        let out = a.readout(&tape, &z, &x, true).unwrap();

        // brute force: per-feature standardize (z+x) over nodes, then mean
        let eps = crate::numerics::BN_EPS;
        for c in 0..4 {
            let col: Vec<f64> = (0..n).map(|i| z_data[i * 4 + c] + x_data[i * 4 + c]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let normed_mean: f64 =
                col.iter().map(|v| (v - mean) / (var + eps).sqrt()).sum::<f64>() / n as f64;
            assert!((out.data()[c] - normed_mean).abs() < 1e-12);
        }
    }

    #[test]
    fn classify_breaks_ties_toward_class_zero() {
        assert_eq!(classify(&[0.0, 0.0]), 0);
        assert_eq!(classify(&[1.2, -0.3]), 0);
        assert_eq!(classify(&[-0.1, 0.4]), 1);
    }

    #[test]
    fn head_softmax_normalizes() {
        let head = ClassifierHead::new(4, 2, 1).unwrap();
        let tape = Tape::inference();
        let z = Tensor::matrix(1, 4, vec![0.3, -0.4, 1.0, 0.2]).unwrap();
        let logits = head.forward(&tape, &z).unwrap();
        let probs = tape.softmax_rows(&logits).unwrap();
        assert!((probs.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adapter_gradients_match_finite_differences() {
        use crate::numerics::check_gradient;
        let a = adapter();
        let x = Tensor::matrix(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let report = check_gradient(
            |tape| {
                let mut rng = ChaCha12Rng::seed_from_u64(0);
                let z = a.forward(tape, &x, Mode::Train, &mut rng)?;
                let zg = a.readout(tape, &z, &x, true)?;
                Ok(tape.mean_all(&tape.mul(&zg, &zg)?)?)
            },
            &[&a.params],
            1e-5,
            1e-3,
        )
        .unwrap();
        assert!(report.pass, "worst {:?}", report.worst());
    }
}
