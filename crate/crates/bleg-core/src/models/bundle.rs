//! The full model bundle: GCN + toy LM + the two projections that bridge
//! them, the stage-3 adapter and head, plus checkpoint/manifest plumbing.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graphdata::BrainGraph;
use crate::numerics::{checkpoint, ParamSet, Tape, Tensor};

use super::adapter::{Adapter, AdapterConfig, ClassifierHead};
use super::gcn::{GcnConfig, GnnEncoder, Mode};
use super::lm::{LmConfig, ToyLm};
use super::tokenizer::Tokenizer;
use super::{ModelError, Result};

/// Fixed stage-3 question fed ahead of the CLS token when extracting Z^T.
pub const PREDICTION_QUESTION: &str = "Give the prediction result of the input brain network.";
/// Stage-2 instruction-tuning question.
pub const DESCRIBE_QUESTION: &str =
    "Please give a detailed description of the given brain network.";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub gnn: GcnConfig,
    pub lm: LmConfig,
    pub adapter: AdapterConfig,
    pub classes: usize,
}

impl ModelConfig {
    pub fn desk_default(input_dim: usize, vocab: usize) -> Self {
        Self {
            gnn: GcnConfig::paper_default(input_dim),
            lm: LmConfig::desk_default(vocab),
            adapter: AdapterConfig::paper_default(64),
            classes: 2,
        }
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hex_string(&hasher.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct ModelBundle {
    pub config: ModelConfig,
    pub gnn: GnnEncoder,
    pub lm: ToyLm,
    /// Graph-to-LM input projection and the CLS output projection.
    pub proj: ParamSet,
    pub adapter: Adapter,
    pub head: ClassifierHead,
    pub tokenizer: Tokenizer,
}

impl ModelBundle {
    pub fn new(config: ModelConfig, tokenizer: Tokenizer, seed: u64) -> Result<Self> {
        if config.lm.vocab != tokenizer.vocab_size() {
            return Err(ModelError::Config(format!(
                "LM vocab {} vs tokenizer vocab {}",
                config.lm.vocab,
                tokenizer.vocab_size()
            )));
        }
        let gnn = GnnEncoder::new(config.gnn.clone(), crate::derive_seed(seed, "gnn"))?;
        let lm = ToyLm::new(config.lm.clone(), crate::derive_seed(seed, "lm"))?;
        let mut proj = ParamSet::new();
        let mut rng = ChaCha12Rng::seed_from_u64(crate::derive_seed(seed, "proj"));
        let (hg, hl) = (config.gnn.hidden, config.lm.width);
        proj.add_gaussian("proj.graph_in.weight", vec![hg, hl], 0.02, &mut rng)?;
        proj.add_zeros("proj.graph_in.bias", vec![hl], true)?;
        proj.add_gaussian("proj.cls_out.weight", vec![hl, hg], 0.02, &mut rng)?;
        proj.add_zeros("proj.cls_out.bias", vec![hg], true)?;
        let adapter = Adapter::new(config.adapter.clone(), crate::derive_seed(seed, "adapter"))?;
        let head = ClassifierHead::new(hg, config.classes, crate::derive_seed(seed, "head"))?;
        Ok(Self { config, gnn, lm, proj, adapter, head, tokenizer })
    }

    /// Mean-pool node embeddings and project into LM width: the single
    /// GRAPH-position embedding.
    pub fn pool_graph_embedding(&self, tape: &Tape, node_embeddings: &Tensor) -> Result<Tensor> {
        let pooled = tape.mean_rows(node_embeddings)?;
        let w = tape.param(&self.proj, "proj.graph_in.weight")?;
        let b = tape.param(&self.proj, "proj.graph_in.bias")?;
        Ok(tape.add_bias(&tape.matmul(&pooled, &w)?, &b)?)
    }

    /// GNN → pooled GRAPH embedding for one graph.
    pub fn graph_token<R: Rng>(
        &self,
        tape: &Tape,
        graph: &BrainGraph,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor> {
        let nodes = self.gnn.forward(tape, graph, mode, rng)?;
        self.pool_graph_embedding(tape, &nodes)
    }

    pub fn param_sets(&self) -> Vec<&ParamSet> {
        vec![
            &self.gnn.params,
            &self.lm.params,
            &self.proj,
            &self.adapter.params,
            &self.head.params,
        ]
    }

    pub fn save(&self, ckpt_path: &Path) -> Result<()> {
        checkpoint::save(ckpt_path, &self.param_sets())?;
        Ok(())
    }

    pub fn load_weights(&self, ckpt_path: &Path) -> Result<()> {
        let entries = checkpoint::load(ckpt_path)?;
        let mut restored = 0;
        for set in self.param_sets() {
            restored += checkpoint::restore_into(&entries, set)?;
        }
        if restored != entries.len() {
            return Err(ModelError::State(format!(
                "checkpoint has {} entries, restored {restored} (architecture mismatch?)",
                entries.len()
            )));
        }
        Ok(())
    }

    /// Write checkpoint + manifest + vocabulary as one versioned unit.
    pub fn save_with_manifest(&self, dir: &Path, stage: &str) -> Result<BundleManifest> {
        std::fs::create_dir_all(dir).map_err(|e| ModelError::State(format!("mkdir: {e}")))?;
        let ckpt_file = format!("{stage}.ckpt");
        let vocab_file = "vocab.json".to_string();
        self.save(&dir.join(&ckpt_file))?;
        self.tokenizer.save(&dir.join(&vocab_file))?;
        let manifest = BundleManifest {
            version: 1,
            stage: stage.to_string(),
            components: vec!["gnn".into(), "lm".into(), "proj".into(), "adapter".into(), "head".into()],
            checkpoint_file: ckpt_file,
            vocab_file,
            config: self.config.clone(),
            config_hash: self.config.hash(),
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| ModelError::State(format!("manifest: {e}")))?;
        std::fs::write(dir.join(format!("{stage}.manifest.json")), json + "\n")
            .map_err(|e| ModelError::State(format!("manifest write: {e}")))?;
        Ok(manifest)
    }

    /// Rebuild a bundle from a stage manifest directory.
    pub fn load_from_manifest(dir: &Path, stage: &str) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(format!("{stage}.manifest.json")))
            .map_err(|e| ModelError::State(format!("missing {stage} manifest: {e}")))?;
        let manifest: BundleManifest =
            serde_json::from_str(&text).map_err(|e| ModelError::State(format!("manifest parse: {e}")))?;
        let tokenizer = Tokenizer::load(&dir.join(&manifest.vocab_file))?;
        let bundle = Self::new(manifest.config.clone(), tokenizer, 0)?;
        bundle.load_weights(&dir.join(&manifest.checkpoint_file))?;
        Ok(bundle)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleManifest {
    pub version: u32,
    pub stage: String,
    pub components: Vec<String>,
    pub checkpoint_file: String,
    pub vocab_file: String,
    pub config: ModelConfig,
    pub config_hash: String,
}

/// Z^T: run [GRAPH | prediction question | CLS] through the LM and project
/// the CLS hidden state back to GNN width. All weights on this path are
/// frozen in stage 3; the tape filter enforces it.
pub fn extract_text_logit<R: Rng>(
    tape: &Tape,
    bundle: &ModelBundle,
    graph: &BrainGraph,
    rng: &mut R,
) -> Result<Tensor> {
    let graph_tok = bundle.graph_token(tape, graph, Mode::Eval, rng)?;
    let mut ids = bundle.tokenizer.encode(PREDICTION_QUESTION);
    ids.push(bundle.tokenizer.cls_id());
    let out = bundle.lm.forward(tape, Some(&graph_tok), &ids)?;
    let (len, _) = out.hidden.dims2()?;
    let cls_hidden = tape.select_rows(&out.hidden, &[len - 1])?;
    let w = tape.param(&bundle.proj, "proj.cls_out.weight")?;
    let b = tape.param(&bundle.proj, "proj.cls_out.bias")?;
    Ok(tape.add_bias(&tape.matmul(&cls_hidden, &w)?, &b)?)
}

#[cfg(test)]
pub(crate) fn test_bundle(seed: u64) -> (ModelBundle, Vec<BrainGraph>) {
    use crate::graphdata::{generate_synthetic_dataset, SynthConfig};
    let cfg = SynthConfig {
        n_graphs: 6,
        n_nodes: 10,
        time_points: 60,
        planted_edges: [vec![(0, 1)], vec![(5, 6)]],
        signal_strength: 3.0,
        noise_level: 1.0,
        seed,
        dataset_name: "bundle-test".into(),
        task_name: "t".into(),
        label_names: ["A".into(), "B".into()],
        keep_fraction: 0.25,
    };
    let ds = generate_synthetic_dataset(&cfg).unwrap();
    let tokenizer = Tokenizer::build([
        "Give the prediction result of the input brain network.",
        "Please give a detailed description of the given brain network.",
        "strong connectivity between regions with weight 0.9",
    ])
    .unwrap();
    let mut mc = ModelConfig::desk_default(10, tokenizer.vocab_size());
    mc.gnn.hidden = 8;
    mc.gnn.layers = 2;
    mc.gnn.dropout = 0.0;
    mc.lm.width = 8;
    mc.lm.heads = 2;
    mc.lm.blocks = 1;
    mc.lm.ffn_mult = 2;
    mc.lm.max_len = 64;
    mc.adapter.width = 8;
    mc.adapter.dropout = 0.0;
    let bundle = ModelBundle::new(mc, tokenizer, seed).unwrap();
    (bundle, ds.graphs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooled_embedding_is_projection_of_node_mean() {
        let (bundle, _) = test_bundle(1);
        let tape = Tape::inference();
        // all node embeddings equal v -> pooled = proj(v)
        let v = vec![0.5, -1.0, 2.0, 0.25, 0.0, 1.0, -0.5, 0.75];
        let nodes = Tensor::matrix(4, 8, v.iter().cloned().cycle().take(32).collect()).unwrap();
        let pooled = bundle.pool_graph_embedding(&tape, &nodes).unwrap();
        let single = Tensor::matrix(1, 8, v.clone()).unwrap();
        let w = tape.param(&bundle.proj, "proj.graph_in.weight").unwrap();
        let b = tape.param(&bundle.proj, "proj.graph_in.bias").unwrap();
        let expected = tape.add_bias(&tape.matmul(&single, &w).unwrap(), &b).unwrap();
        for (p, e) in pooled.data().iter().zip(expected.data()) {
            assert!((p - e).abs() < 1e-12);
        }
    }

    #[test]
    fn antipodal_nodes_pool_to_projected_zero() {
        let (bundle, _) = test_bundle(1);
        let tape = Tape::inference();
        let u: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
        let mut data = u.clone();
        data.extend(u.iter().map(|x| -x));
        let nodes = Tensor::matrix(2, 8, data).unwrap();
        let pooled = bundle.pool_graph_embedding(&tape, &nodes).unwrap();
        let bias = bundle.proj.require("proj.graph_in.bias").unwrap().values();
        for (p, b) in pooled.data().iter().zip(&bias) {
            assert!((p - b).abs() < 1e-12, "projection of zero is the bias");
        }
    }

    #[test]
    fn text_logit_is_deterministic_and_width_matched() {
        let (bundle, graphs) = test_bundle(2);
        let tape = Tape::inference();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let a = extract_text_logit(&tape, &bundle, &graphs[0], &mut rng).unwrap();
        let b = extract_text_logit(&tape, &bundle, &graphs[0], &mut rng).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.shape(), &[1, bundle.config.gnn.hidden]);
    }

    #[test]
    fn bundle_checkpoint_roundtrip_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let (bundle, graphs) = test_bundle(3);
        let manifest = bundle.save_with_manifest(dir.path(), "stage2").unwrap();
        assert_eq!(manifest.components.len(), 5);
        assert_eq!(manifest.config_hash, bundle.config.hash());

        let loaded = ModelBundle::load_from_manifest(dir.path(), "stage2").unwrap();
        let tape = Tape::inference();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let a = extract_text_logit(&tape, &bundle, &graphs[0], &mut rng).unwrap();
        let b = extract_text_logit(&tape, &loaded, &graphs[0], &mut rng).unwrap();
        assert_eq!(a.data(), b.data(), "reloaded weights must reproduce outputs bit-exactly");
    }

    #[test]
    fn missing_stage_checkpoint_is_a_state_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = ModelBundle::load_from_manifest(dir.path(), "stage2").unwrap_err();
        assert!(matches!(err, ModelError::State(_)));
    }
}
