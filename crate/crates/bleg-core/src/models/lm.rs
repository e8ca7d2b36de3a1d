//! Toy decoder-only language model: learned token + position embeddings,
//! pre-norm blocks with causal multi-head attention and a 4x feed-forward,
//! output projection tied to the embedding table. Graph positions take a
//! projected GNN embedding instead of a table lookup.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{ParamSet, Tape, Tensor};

use super::{ModelError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab: usize,
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ffn_mult: usize,
    pub max_len: usize,
    pub ln_eps: f64,
}

impl LmConfig {
    pub fn desk_default(vocab: usize) -> Self {
        Self { vocab, width: 64, heads: 4, blocks: 2, ffn_mult: 4, max_len: 512, ln_eps: 1e-5 }
    }
}

/// Concatenated (graph positions | question | answer) input with the answer
/// mask implied by the region boundaries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceInput {
    pub graph_positions: usize,
    pub question: Vec<u32>,
    pub answer: Vec<u32>,
}

impl SequenceInput {
    pub fn len(&self) -> usize {
        self.graph_positions + self.question.len() + self.answer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Token ids for the non-graph positions, in order.
    pub fn token_ids(&self) -> Vec<u32> {
        let mut ids = self.question.clone();
        ids.extend_from_slice(&self.answer);
        ids
    }

    pub fn answer_start(&self) -> usize {
        self.graph_positions + self.question.len()
    }

    /// 1 exactly at answer positions.
    pub fn answer_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        for m in mask.iter_mut().skip(self.answer_start()) {
            *m = true;
        }
        mask
    }

    /// Positions whose logits the answer loss consumes: {t-1 | t in answer}.
    pub fn consumed_logit_positions(&self) -> Vec<usize> {
        (self.answer_start()..self.len()).map(|t| t - 1).collect()
    }
}

pub struct LmOutput {
    /// Final hidden states after the last layer norm, L×H.
    pub hidden: Tensor,
    /// Per-position vocabulary logits, L×V.
    pub logits: Tensor,
}

pub struct ToyLm {
    pub cfg: LmConfig,
    pub params: ParamSet,
}

impl ToyLm {
    pub fn new(cfg: LmConfig, seed: u64) -> Result<Self> {
        if cfg.width % cfg.heads != 0 {
            return Err(ModelError::Config(format!(
                "width {} not divisible by {} heads",
                cfg.width, cfg.heads
            )));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let (v, h, f) = (cfg.vocab, cfg.width, cfg.width * cfg.ffn_mult);
        p.add_gaussian("lm.tok_emb", vec![v, h], 0.02, &mut rng)?;
        p.add_gaussian("lm.pos_emb", vec![cfg.max_len, h], 0.02, &mut rng)?;
        for b in 0..cfg.blocks {
            p.add_ones(&format!("lm.block{b}.ln1.gamma"), vec![h], true)?;
            p.add_zeros(&format!("lm.block{b}.ln1.beta"), vec![h], true)?;
            for proj in ["wq", "wk", "wv", "wo"] {
                p.add_gaussian(&format!("lm.block{b}.attn.{proj}"), vec![h, h], 0.02, &mut rng)?;
            }
            p.add_ones(&format!("lm.block{b}.ln2.gamma"), vec![h], true)?;
            p.add_zeros(&format!("lm.block{b}.ln2.beta"), vec![h], true)?;
            p.add_gaussian(&format!("lm.block{b}.ffn.w1"), vec![h, f], 0.02, &mut rng)?;
            p.add_zeros(&format!("lm.block{b}.ffn.b1"), vec![f], true)?;
            p.add_gaussian(&format!("lm.block{b}.ffn.w2"), vec![f, h], 0.02, &mut rng)?;
            p.add_zeros(&format!("lm.block{b}.ffn.b2"), vec![h], true)?;
        }
        p.add_ones("lm.final_ln.gamma", vec![h], true)?;
        p.add_zeros("lm.final_ln.beta", vec![h], true)?;
        Ok(Self { cfg, params: p })
    }

    /// Assemble input embeddings: graph rows (projected GNN output) ahead of
    /// token-table rows, plus learned positional embeddings.
    pub fn embed(&self, tape: &Tape, graph_emb: Option<&Tensor>, token_ids: &[u32]) -> Result<Tensor> {
        let graph_rows = graph_emb.map_or(0, |t| t.shape()[0]);
        let total = graph_rows + token_ids.len();
        if total == 0 {
            return Err(ModelError::Config("empty sequence".into()));
        }
        if total > self.cfg.max_len {
            return Err(ModelError::Overlength { length: total, max: self.cfg.max_len });
        }
        let tok_emb = tape.param(&self.params, "lm.tok_emb")?;
        let idx: Vec<usize> = token_ids.iter().map(|&t| t as usize).collect();
        for &t in &idx {
            if t >= self.cfg.vocab {
                return Err(ModelError::Config(format!("token id {t} outside vocabulary")));
            }
        }
        let token_rows = tape.select_rows(&tok_emb, &idx)?;
        let x = match graph_emb {
            Some(g) => tape.concat_rows(&[g, &token_rows])?,
            None => token_rows,
        };
        let pos_emb = tape.param(&self.params, "lm.pos_emb")?;
        let positions: Vec<usize> = (0..total).collect();
        let pos_rows = tape.select_rows(&pos_emb, &positions)?;
        Ok(tape.add(&x, &pos_rows)?)
    }

    /// Full forward: embeddings through the decoder blocks to hidden states
    /// and tied-weight logits.
    pub fn forward(&self, tape: &Tape, graph_emb: Option<&Tensor>, token_ids: &[u32]) -> Result<LmOutput> {
        let x = self.embed(tape, graph_emb, token_ids)?;
        self.forward_embedded(tape, &x)
    }

    pub fn forward_embedded(&self, tape: &Tape, x: &Tensor) -> Result<LmOutput> {
        let (len, _) = x.dims2()?;
        let mask = causal_mask(len);
        let mut h = x.clone();
        for b in 0..self.cfg.blocks {
            h = self.block(tape, &h, b, &mask)?;
        }
        let gamma = tape.param(&self.params, "lm.final_ln.gamma")?;
        let beta = tape.param(&self.params, "lm.final_ln.beta")?;
        let hidden = tape.layer_norm(&h, &gamma, &beta, self.cfg.ln_eps)?;
        let tok_emb = tape.param(&self.params, "lm.tok_emb")?;
        let logits = tape.matmul(&hidden, &tape.transpose(&tok_emb)?)?;
        Ok(LmOutput { hidden, logits })
    }

    fn block(&self, tape: &Tape, x: &Tensor, b: usize, mask: &Tensor) -> Result<Tensor> {
        let p = |name: &str| tape.param(&self.params, &format!("lm.block{b}.{name}"));
        // pre-norm attention with residual
        let ln1 = tape.layer_norm(x, &p("ln1.gamma")?, &p("ln1.beta")?, self.cfg.ln_eps)?;
        let attn = self.attention(tape, &ln1, b, mask)?;
        let x = tape.add(x, &attn)?;
        // pre-norm feed-forward with residual
        let ln2 = tape.layer_norm(&x, &p("ln2.gamma")?, &p("ln2.beta")?, self.cfg.ln_eps)?;
        let h1 = tape.gelu(&tape.add_bias(&tape.matmul(&ln2, &p("ffn.w1")?)?, &p("ffn.b1")?)?)?;
        let h2 = tape.add_bias(&tape.matmul(&h1, &p("ffn.w2")?)?, &p("ffn.b2")?)?;
        Ok(tape.add(&x, &h2)?)
    }

    fn attention(&self, tape: &Tape, x: &Tensor, b: usize, mask: &Tensor) -> Result<Tensor> {
        let p = |name: &str| tape.param(&self.params, &format!("lm.block{b}.attn.{name}"));
        let q = tape.matmul(x, &p("wq")?)?;
        let k = tape.matmul(x, &p("wk")?)?;
        let v = tape.matmul(x, &p("wv")?)?;
        let head_dim = self.cfg.width / self.cfg.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for hd in 0..self.cfg.heads {
            let start = hd * head_dim;
            let qh = tape.slice_cols(&q, start, head_dim)?;
            let kh = tape.slice_cols(&k, start, head_dim)?;
            let vh = tape.slice_cols(&v, start, head_dim)?;
            let scores = tape.scale(&tape.matmul(&qh, &tape.transpose(&kh)?)?, scale)?;
            let masked = tape.add(&scores, mask)?;
            let weights = tape.softmax_rows(&masked)?;
            heads.push(tape.matmul(&weights, &vh)?);
        }
        let head_refs: Vec<&Tensor> = heads.iter().collect();
        let concat = tape.concat_cols(&head_refs)?;
        Ok(tape.matmul(&concat, &p("wo")?)?)
    }
}

/// Strictly causal additive mask: 0 at j <= i, large negative above the
/// diagonal (finite so softmax backward stays clean).
fn causal_mask(len: usize) -> Tensor {
    let mut m = vec![0.0; len * len];
    for i in 0..len {
        for j in (i + 1)..len {
            m[i * len + j] = -1e30;
        }
    }
    Tensor::from_op(m, vec![len, len], None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_lm(seed: u64) -> ToyLm {
        ToyLm::new(
            LmConfig { vocab: 11, width: 8, heads: 2, blocks: 2, ffn_mult: 2, max_len: 16, ln_eps: 1e-5 },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn causality_is_exact() {
        // changing the token at position t changes logits only at >= t
        let lm = tiny_lm(3);
        let tape = Tape::inference();
        let ids_a = [1u32, 2, 3, 4, 5];
        let ids_b = [1u32, 2, 3, 9, 5]; // differs at position 3
        let la = lm.forward(&tape, None, &ids_a).unwrap().logits;
        let lb = lm.forward(&tape, None, &ids_b).unwrap().logits;
        let v = lm.cfg.vocab;
        for t in 0..3 {
            for c in 0..v {
                assert_eq!(la.data()[t * v + c], lb.data()[t * v + c], "position {t} changed");
            }
        }
        let differs = (3..5).any(|t| (0..v).any(|c| la.data()[t * v + c] != lb.data()[t * v + c]));
        assert!(differs);
    }

    #[test]
    fn zeroed_parameters_give_uniform_distribution() {
        let lm = tiny_lm(1);
        for p in lm.params.entries() {
            p.set(vec![0.0; p.numel()]);
        }
        let tape = Tape::inference();
        let out = lm.forward(&tape, None, &[1, 2, 3]).unwrap();
        let probs = tape.softmax_rows(&out.logits).unwrap();
        let v = lm.cfg.vocab;
        for p in probs.data() {
            assert!((p - 1.0 / v as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn overlength_is_an_error_never_silent_truncation() {
        let lm = tiny_lm(1);
        let tape = Tape::inference();
        let ids: Vec<u32> = (0..17).map(|i| i % 10).collect();
        match lm.forward(&tape, None, &ids) {
            Err(ModelError::Overlength { length: 17, max: 16 }) => {}
            other => panic!("expected overlength error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn graph_position_receives_the_injected_embedding() {
        let lm = tiny_lm(5);
        let tape = Tape::inference();
        let g1 = Tensor::matrix(1, 8, vec![0.5; 8]).unwrap();
        let g2 = Tensor::matrix(1, 8, vec![-0.5; 8]).unwrap();
        let a = lm.forward(&tape, Some(&g1), &[1, 2]).unwrap().logits;
        let b = lm.forward(&tape, Some(&g2), &[1, 2]).unwrap().logits;
        assert_ne!(a.data(), b.data());
    }

    /// Independent dense re-implementation of the forward pass (no tape, no
    /// slicing machinery) for a 5-token sequence.
    fn oracle_forward(lm: &ToyLm, ids: &[u32]) -> Vec<f64> {
        let cfg = &lm.cfg;
        let h = cfg.width;
        let val = |name: &str| lm.params.require(name).unwrap().values();
        let len = ids.len();
        // embeddings
        let tok = val("lm.tok_emb");
        let pos = val("lm.pos_emb");
        let mut x = vec![0.0; len * h];
        for (t, &id) in ids.iter().enumerate() {
            for c in 0..h {
                x[t * h + c] = tok[id as usize * h + c] + pos[t * h + c];
            }
        }
        let layer_norm = |x: &[f64], gamma: &[f64], beta: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; x.len()];
            for t in 0..len {
                let row = &x[t * h..(t + 1) * h];
                let mean = row.iter().sum::<f64>() / h as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
                for c in 0..h {
                    out[t * h + c] = gamma[c] * (row[c] - mean) / (var + cfg.ln_eps).sqrt() + beta[c];
                }
            }
            out
        };
        let matvec = |x: &[f64], w: &[f64], rows: usize, inner: usize, cols: usize| -> Vec<f64> {
            let mut out = vec![0.0; rows * cols];
            for i in 0..rows {
                for kk in 0..inner {
                    for j in 0..cols {
                        out[i * cols + j] += x[i * inner + kk] * w[kk * cols + j];
                    }
                }
            }
            out
        };
        let gelu = |v: f64| {
            let c = (2.0 / std::f64::consts::PI).sqrt();
            0.5 * v * (1.0 + (c * (v + 0.044715 * v * v * v)).tanh())
        };
        for b in 0..cfg.blocks {
            let pfx = format!("lm.block{b}");
            let ln1 = layer_norm(&x, &val(&format!("{pfx}.ln1.gamma")), &val(&format!("{pfx}.ln1.beta")));
            let q = matvec(&ln1, &val(&format!("{pfx}.attn.wq")), len, h, h);
            let k = matvec(&ln1, &val(&format!("{pfx}.attn.wk")), len, h, h);
            let v = matvec(&ln1, &val(&format!("{pfx}.attn.wv")), len, h, h);
            let hd = h / cfg.heads;
            let mut concat = vec![0.0; len * h];
            for head in 0..cfg.heads {
                let off = head * hd;
                for i in 0..len {
                    // causal attention weights over j <= i
                    let mut scores = vec![f64::NEG_INFINITY; len];
                    for (j, s) in scores.iter_mut().enumerate().take(i + 1) {
                        let mut dot = 0.0;
                        for c in 0..hd {
                            dot += q[i * h + off + c] * k[j * h + off + c];
                        }
                        *s = dot / (hd as f64).sqrt();
                    }
                    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    for c in 0..hd {
                        let mut acc = 0.0;
                        for j in 0..=i {
                            acc += exps[j] / sum * v[j * h + off + c];
                        }
                        concat[i * h + off + c] = acc;
                    }
                }
            }
            let attn = matvec(&concat, &val(&format!("{pfx}.attn.wo")), len, h, h);
            for (xi, a) in x.iter_mut().zip(&attn) {
                *xi += a;
            }
            let ln2 = layer_norm(&x, &val(&format!("{pfx}.ln2.gamma")), &val(&format!("{pfx}.ln2.beta")));
            let f = cfg.width * cfg.ffn_mult;
            let mut h1 = matvec(&ln2, &val(&format!("{pfx}.ffn.w1")), len, h, f);
            let b1 = val(&format!("{pfx}.ffn.b1"));
            for i in 0..len {
                for c in 0..f {
                    h1[i * f + c] = gelu(h1[i * f + c] + b1[c]);
                }
            }
            let mut h2 = matvec(&h1, &val(&format!("{pfx}.ffn.w2")), len, f, h);
            let b2 = val(&format!("{pfx}.ffn.b2"));
            for i in 0..len {
                for c in 0..h {
                    h2[i * h + c] += b2[c];
                }
            }
            for (xi, a) in x.iter_mut().zip(&h2) {
                *xi += a;
            }
        }
        let hidden = layer_norm(&x, &val("lm.final_ln.gamma"), &val("lm.final_ln.beta"));
        // logits = hidden · tok_emb^T
        let mut logits = vec![0.0; len * cfg.vocab];
        for i in 0..len {
            for vv in 0..cfg.vocab {
                let mut dot = 0.0;
                for c in 0..h {
                    dot += hidden[i * h + c] * tok[vv * h + c];
                }
                logits[i * cfg.vocab + vv] = dot;
            }
        }
        logits
    }

    #[test]
    fn logits_match_independent_dense_attention_oracle() {
        let lm = tiny_lm(42);
        let ids = [3u32, 7, 1, 9, 4];
        let tape = Tape::inference();
        let ours = lm.forward(&tape, None, &ids).unwrap().logits;
        let oracle = oracle_forward(&lm, &ids);
        for (a, b) in ours.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn sequence_input_mask_and_consumed_positions() {
        let seq = SequenceInput { graph_positions: 1, question: vec![1, 2, 3], answer: vec![4, 5] };
        assert_eq!(seq.len(), 6);
        assert_eq!(seq.answer_start(), 4);
        assert_eq!(seq.answer_mask(), vec![false, false, false, false, true, true]);
        assert_eq!(seq.consumed_logit_positions(), vec![3, 4]);
    }

    #[test]
    fn lm_gradients_match_finite_differences() {
        use crate::numerics::check_gradient;
        let lm = ToyLm::new(
            LmConfig { vocab: 7, width: 4, heads: 2, blocks: 1, ffn_mult: 2, max_len: 8, ln_eps: 1e-5 },
            9,
        )
        .unwrap();
        let ids = [1u32, 5, 2];
        let report = check_gradient(
            |tape| {
                let out = lm.forward(tape, None, &ids)?;
                let losses = tape.softmax_cross_entropy(&out.logits, &[5, 2, 6])?;
                Ok(tape.mean_all(&losses)?)
            },
            &[&lm.params],
            1e-5,
            1e-3,
        )
        .unwrap();
        assert!(report.pass, "worst {:?}", report.worst());
    }
}
