//! Forward ops with closed-form reverse rules, all recorded on the [`Tape`].
//!
//! Every op funnels through `Tape::out`, which enforces the all-finite
//! invariant and appends the backward closure. Backward closures capture
//! `Arc` handles to the input data they need, never the tensors themselves.

use std::sync::Arc;

use rand::Rng;

use super::tape::{accumulate, BackwardFn, Tape};
use super::tensor::Tensor;
use super::{NumericsError, Result};

/// Per-feature statistics of a training-mode batch-norm pass, for running
/// average updates.
#[derive(Debug, Clone)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var_biased: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

const GELU_C: f64 = 0.044715;

fn sqrt_2_over_pi() -> f64 {
    (2.0 / std::f64::consts::PI).sqrt()
}

impl Tape {
    fn out(
        &self,
        op: &'static str,
        data: Vec<f64>,
        shape: Vec<usize>,
        backward: Option<BackwardFn>,
    ) -> Result<Tensor> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite { op });
        }
        let node = self.push_node(op, data.len(), backward);
        Ok(Tensor::from_op(data, shape, node))
    }

    fn bwd(&self, differentiable: bool, f: impl Fn(&[f64], &mut [Option<Vec<f64>>]) + 'static) -> Option<BackwardFn> {
        if self.is_recording() && differentiable {
            Some(Box::new(f))
        } else {
            None
        }
    }

    /// C = A · B for rank-2 tensors.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = a.dims2()?;
        let (k2, n) = b.dims2()?;
        if k != k2 {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                details: format!("{:?} x {:?}", a.shape(), b.shape()),
            });
        }
        let av = a.data();
        let bv = b.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &aip) in arow.iter().enumerate() {
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &bpj) in orow.iter_mut().zip(brow) {
                    *o += aip * bpj;
                }
            }
        }
        let (a_node, b_node) = (a.node, b.node);
        let (ad, bd) = (a.data_arc(), b.data_arc());
        let backward = self.bwd(a_node.is_some() || b_node.is_some(), move |g, slots| {
            if let Some(id) = a_node {
                accumulate(slots, id, m * k, |da| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            let s: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            da[i * k + p] += s;
                        }
                    }
                });
            }
            if let Some(id) = b_node {
                accumulate(slots, id, k * n, |db| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            let drow = &mut db[p * n..(p + 1) * n];
                            for (d, &gj) in drow.iter_mut().zip(grow) {
                                *d += aip * gj;
                            }
                        }
                    }
                });
            }
        });
        self.out("matmul", out, vec![m, n], backward)
    }

    pub fn transpose(&self, a: &Tensor) -> Result<Tensor> {
        let (m, n) = a.dims2()?;
        let av = a.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let a_node = a.node;
        let backward = self.bwd(a_node.is_some(), move |g, slots| {
            if let Some(id) = a_node {
                accumulate(slots, id, m * n, |da| {
                    for j in 0..n {
                        for i in 0..m {
                            da[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
        });
        self.out("transpose", out, vec![n, m], backward)
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.zip_same_shape("add", a, b, |x, y| x + y, |_g| (1.0, 1.0))
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.zip_same_shape("sub", a, b, |x, y| x - y, |_g| (1.0, -1.0))
    }

    /// Elementwise product. Gradients flow to both operands (and accumulate
    /// when both are the same node).
    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "mul",
                details: format!("{:?} vs {:?}", a.shape(), b.shape()),
            });
        }
        let out: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let (a_node, b_node) = (a.node, b.node);
        let (ad, bd) = (a.data_arc(), b.data_arc());
        let numel = out.len();
        let backward = self.bwd(a_node.is_some() || b_node.is_some(), move |g, slots| {
            if let Some(id) = a_node {
                accumulate(slots, id, numel, |da| {
                    for (d, (gv, bv)) in da.iter_mut().zip(g.iter().zip(bd.iter())) {
                        *d += gv * bv;
                    }
                });
            }
            if let Some(id) = b_node {
                accumulate(slots, id, numel, |db| {
                    for (d, (gv, av)) in db.iter_mut().zip(g.iter().zip(ad.iter())) {
                        *d += gv * av;
                    }
                });
            }
        });
        self.out("mul", out, a.shape().to_vec(), backward)
    }

    fn zip_same_shape(
        &self,
        op: &'static str,
        a: &Tensor,
        b: &Tensor,
        f: impl Fn(f64, f64) -> f64,
        coeffs: impl Fn(f64) -> (f64, f64) + 'static,
    ) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(NumericsError::ShapeMismatch {
                op,
                details: format!("{:?} vs {:?}", a.shape(), b.shape()),
            });
        }
        let out: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
        let (a_node, b_node) = (a.node, b.node);
        let numel = out.len();
        let backward = self.bwd(a_node.is_some() || b_node.is_some(), move |g, slots| {
            let (ca, cb) = coeffs(0.0);
            if let Some(id) = a_node {
                accumulate(slots, id, numel, |da| {
                    for (d, gv) in da.iter_mut().zip(g) {
                        *d += ca * gv;
                    }
                });
            }
            if let Some(id) = b_node {
                accumulate(slots, id, numel, |db| {
                    for (d, gv) in db.iter_mut().zip(g) {
                        *d += cb * gv;
                    }
                });
            }
        });
        self.out(op, out, a.shape().to_vec(), backward)
    }

    /// x (m×n) + bias (n), broadcast over rows.
    pub fn add_bias(&self, x: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (m, n) = x.dims2()?;
        if bias.shape() != [n] {
            return Err(NumericsError::ShapeMismatch {
                op: "add_bias",
                details: format!("x {:?} vs bias {:?}", x.shape(), bias.shape()),
            });
        }
        let bv = bias.data();
        let out: Vec<f64> = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv[i % n])
            .collect();
        let (x_node, b_node) = (x.node, bias.node);
        let backward = self.bwd(x_node.is_some() || b_node.is_some(), move |g, slots| {
            if let Some(id) = x_node {
                accumulate(slots, id, m * n, |dx| {
                    for (d, gv) in dx.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
            }
            if let Some(id) = b_node {
                accumulate(slots, id, n, |db| {
                    for (i, gv) in g.iter().enumerate() {
                        db[i % n] += gv;
                    }
                });
            }
        });
        self.out("add_bias", out, vec![m, n], backward)
    }

    pub fn scale(&self, x: &Tensor, c: f64) -> Result<Tensor> {
        let out: Vec<f64> = x.data().iter().map(|v| v * c).collect();
        let x_node = x.node;
        let numel = out.len();
        let backward = self.bwd(x_node.is_some(), move |g, slots| {
            if let Some(id) = x_node {
                accumulate(slots, id, numel, |dx| {
                    for (d, gv) in dx.iter_mut().zip(g) {
                        *d += c * gv;
                    }
                });
            }
        });
        self.out("scale", out, x.shape().to_vec(), backward)
    }

    /// GeLU, tanh approximation (the variant with a closed-form derivative).
    pub fn gelu(&self, x: &Tensor) -> Result<Tensor> {
        let c = sqrt_2_over_pi();
        let out: Vec<f64> = x
            .data()
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (c * (v + GELU_C * v * v * v)).tanh()))
            .collect();
        let x_node = x.node;
        let xd = x.data_arc();
        let numel = out.len();
        let backward = self.bwd(x_node.is_some(), move |g, slots| {
            if let Some(id) = x_node {
                accumulate(slots, id, numel, |dx| {
                    for ((d, gv), &v) in dx.iter_mut().zip(g).zip(xd.iter()) {
                        let u = c * (v + GELU_C * v * v * v);
                        let t = u.tanh();
                        let sech2 = 1.0 - t * t;
                        let du = c * (1.0 + 3.0 * GELU_C * v * v);
                        *d += gv * (0.5 * (1.0 + t) + 0.5 * v * sech2 * du);
                    }
                });
            }
        });
        self.out("gelu", out, x.shape().to_vec(), backward)
    }

    /// Row-wise softmax of a rank-2 tensor.
    pub fn softmax_rows(&self, x: &Tensor) -> Result<Tensor> {
        let (m, n) = x.dims2()?;
        let xv = x.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let orow = &mut out[i * n..(i + 1) * n];
            let mut sum = 0.0;
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        let x_node = x.node;
        let probs = Arc::new(out.clone());
        let backward = self.bwd(x_node.is_some(), move |g, slots| {
            if let Some(id) = x_node {
                accumulate(slots, id, m * n, |dx| {
                    for i in 0..m {
                        let y = &probs[i * n..(i + 1) * n];
                        let grow = &g[i * n..(i + 1) * n];
                        let dot: f64 = grow.iter().zip(y).map(|(a, b)| a * b).sum();
                        for ((d, &gv), &yv) in
                            dx[i * n..(i + 1) * n].iter_mut().zip(grow).zip(y)
                        {
                            *d += yv * (gv - dot);
                        }
                    }
                });
            }
        });
        self.out("softmax", out, vec![m, n], backward)
    }

    /// Per-row layer normalization with affine.
    pub fn layer_norm(&self, x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let (m, n) = x.dims2()?;
        if gamma.shape() != [n] || beta.shape() != [n] {
            return Err(NumericsError::ShapeMismatch {
                op: "layer_norm",
                details: format!("x {:?}, gamma {:?}, beta {:?}", x.shape(), gamma.shape(), beta.shape()),
            });
        }
        let xv = x.data();
        let gv = gamma.data();
        let bv = beta.data();
        let mut out = vec![0.0; m * n];
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[i] = istd;
            for j in 0..n {
                let h = (row[j] - mean) * istd;
                xhat[i * n + j] = h;
                out[i * n + j] = gv[j] * h + bv[j];
            }
        }
        let (x_node, g_node, b_node) = (x.node, gamma.node, beta.node);
        let gamma_d = gamma.data_arc();
        let xhat = Arc::new(xhat);
        let inv_std = Arc::new(inv_std);
        let backward = self.bwd(
            x_node.is_some() || g_node.is_some() || b_node.is_some(),
            move |g, slots| {
                if let Some(id) = g_node {
                    accumulate(slots, id, n, |dg| {
                        for i in 0..m {
                            for j in 0..n {
                                dg[j] += g[i * n + j] * xhat[i * n + j];
                            }
                        }
                    });
                }
                if let Some(id) = b_node {
                    accumulate(slots, id, n, |db| {
                        for i in 0..m {
                            for j in 0..n {
                                db[j] += g[i * n + j];
                            }
                        }
                    });
                }
                if let Some(id) = x_node {
                    accumulate(slots, id, m * n, |dx| {
                        for i in 0..m {
                            let mut mean_dh = 0.0;
                            let mut mean_dh_h = 0.0;
                            for j in 0..n {
                                let dh = g[i * n + j] * gamma_d[j];
                                mean_dh += dh;
                                mean_dh_h += dh * xhat[i * n + j];
                            }
                            mean_dh /= n as f64;
                            mean_dh_h /= n as f64;
                            for j in 0..n {
                                let dh = g[i * n + j] * gamma_d[j];
                                dx[i * n + j] +=
                                    inv_std[i] * (dh - mean_dh - xhat[i * n + j] * mean_dh_h);
                            }
                        }
                    });
                }
            },
        );
        self.out("layer_norm", out, vec![m, n], backward)
    }

    /// Training-mode batch normalization over rows (the batch dimension).
    /// Returns the normalized output and the batch statistics so the caller
    /// can fold them into running averages.
    pub fn batch_norm_train(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        eps: f64,
    ) -> Result<(Tensor, BnStats)> {
        let (b, _) = x.dims2()?;
        if b < 2 {
            return Err(NumericsError::DegenerateInput {
                op: "batch_norm",
                details: format!("training mode requires batch >= 2, got {b}"),
            });
        }
        self.bn_train_impl(x, gamma, beta, eps)
    }

    /// Per-feature normalization over rows without running statistics: the
    /// within-graph "Norm" of the readout and adapter (defined for a single
    /// row, where it degenerates to the affine offset).
    pub fn feature_norm(&self, x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        Ok(self.bn_train_impl(x, gamma, beta, eps)?.0)
    }

    fn bn_train_impl(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        eps: f64,
    ) -> Result<(Tensor, BnStats)> {
        let (b, f) = x.dims2()?;
        if gamma.shape() != [f] || beta.shape() != [f] {
            return Err(NumericsError::ShapeMismatch {
                op: "batch_norm",
                details: format!("x {:?}, gamma {:?}, beta {:?}", x.shape(), gamma.shape(), beta.shape()),
            });
        }
        let xv = x.data();
        let gv = gamma.data();
        let bv = beta.data();
        let mut mean = vec![0.0; f];
        let mut var = vec![0.0; f];
        for i in 0..b {
            for j in 0..f {
                mean[j] += xv[i * f + j];
            }
        }
        for m in mean.iter_mut() {
            *m /= b as f64;
        }
        for i in 0..b {
            for j in 0..f {
                let d = xv[i * f + j] - mean[j];
                var[j] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= b as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = vec![0.0; b * f];
        let mut xhat = vec![0.0; b * f];
        for i in 0..b {
            for j in 0..f {
                let h = (xv[i * f + j] - mean[j]) * inv_std[j];
                xhat[i * f + j] = h;
                out[i * f + j] = gv[j] * h + bv[j];
            }
        }
        let var_unbiased: Vec<f64> = if b > 1 {
            var.iter().map(|v| v * b as f64 / (b as f64 - 1.0)).collect()
        } else {
            var.clone()
        };
        let stats = BnStats { mean: mean.clone(), var_biased: var.clone(), var_unbiased };

        let (x_node, g_node, b_node) = (x.node, gamma.node, beta.node);
        let gamma_d = gamma.data_arc();
        let xhat = Arc::new(xhat);
        let inv_std = Arc::new(inv_std);
        let backward = self.bwd(
            x_node.is_some() || g_node.is_some() || b_node.is_some(),
            move |g, slots| {
                if let Some(id) = g_node {
                    accumulate(slots, id, f, |dg| {
                        for i in 0..b {
                            for j in 0..f {
                                dg[j] += g[i * f + j] * xhat[i * f + j];
                            }
                        }
                    });
                }
                if let Some(id) = b_node {
                    accumulate(slots, id, f, |db| {
                        for i in 0..b {
                            for j in 0..f {
                                db[j] += g[i * f + j];
                            }
                        }
                    });
                }
                if let Some(id) = x_node {
                    accumulate(slots, id, b * f, |dx| {
                        for j in 0..f {
                            let mut mean_dh = 0.0;
                            let mut mean_dh_h = 0.0;
                            for i in 0..b {
                                let dh = g[i * f + j] * gamma_d[j];
                                mean_dh += dh;
                                mean_dh_h += dh * xhat[i * f + j];
                            }
                            mean_dh /= b as f64;
                            mean_dh_h /= b as f64;
                            for i in 0..b {
                                let dh = g[i * f + j] * gamma_d[j];
                                dx[i * f + j] +=
                                    inv_std[j] * (dh - mean_dh - xhat[i * f + j] * mean_dh_h);
                            }
                        }
                    });
                }
            },
        );
        let out = self.out("batch_norm", out, vec![b, f], backward)?;
        Ok((out, stats))
    }

    /// Evaluation-mode batch normalization against frozen running stats.
    pub fn batch_norm_eval(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Tensor> {
        let (b, f) = x.dims2()?;
        if gamma.shape() != [f] || beta.shape() != [f] || running_mean.len() != f || running_var.len() != f {
            return Err(NumericsError::ShapeMismatch {
                op: "batch_norm_eval",
                details: format!("x {:?}, feature width {f}", x.shape()),
            });
        }
        let xv = x.data();
        let gv = gamma.data();
        let bv = beta.data();
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = vec![0.0; b * f];
        let mut xhat = vec![0.0; b * f];
        for i in 0..b {
            for j in 0..f {
                let h = (xv[i * f + j] - running_mean[j]) * inv_std[j];
                xhat[i * f + j] = h;
                out[i * f + j] = gv[j] * h + bv[j];
            }
        }
        let (x_node, g_node, b_node) = (x.node, gamma.node, beta.node);
        let gamma_d = gamma.data_arc();
        let xhat = Arc::new(xhat);
        let inv_std = Arc::new(inv_std);
        let backward = self.bwd(
            x_node.is_some() || g_node.is_some() || b_node.is_some(),
            move |g, slots| {
                if let Some(id) = g_node {
                    accumulate(slots, id, f, |dg| {
                        for i in 0..b {
                            for j in 0..f {
                                dg[j] += g[i * f + j] * xhat[i * f + j];
                            }
                        }
                    });
                }
                if let Some(id) = b_node {
                    accumulate(slots, id, f, |db| {
                        for i in 0..b {
                            for j in 0..f {
                                db[j] += g[i * f + j];
                            }
                        }
                    });
                }
                if let Some(id) = x_node {
                    accumulate(slots, id, b * f, |dx| {
                        for i in 0..b {
                            for j in 0..f {
                                dx[i * f + j] += g[i * f + j] * gamma_d[j] * inv_std[j];
                            }
                        }
                    });
                }
            },
        );
        self.out("batch_norm_eval", out, vec![b, f], backward)
    }

    /// Divide each row by its L2 norm. All-zero rows are a contract error.
    pub fn l2_normalize_rows(&self, x: &Tensor) -> Result<Tensor> {
        let (m, n) = x.dims2()?;
        let xv = x.data();
        let mut norms = vec![0.0; m];
        for i in 0..m {
            let s: f64 = xv[i * n..(i + 1) * n].iter().map(|v| v * v).sum();
            if s == 0.0 {
                return Err(NumericsError::DegenerateInput {
                    op: "l2_normalize",
                    details: format!("row {i} is all-zero"),
                });
            }
            norms[i] = s.sqrt();
        }
        let out: Vec<f64> = xv
            .iter()
            .enumerate()
            .map(|(idx, v)| v / norms[idx / n])
            .collect();
        let x_node = x.node;
        let y = Arc::new(out.clone());
        let norms = Arc::new(norms);
        let backward = self.bwd(x_node.is_some(), move |g, slots| {
            if let Some(id) = x_node {
                accumulate(slots, id, m * n, |dx| {
                    for i in 0..m {
                        let yrow = &y[i * n..(i + 1) * n];
                        let grow = &g[i * n..(i + 1) * n];
                        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dx[i * n + j] += (grow[j] - yrow[j] * dot) / norms[i];
                        }
                    }
                });
            }
        });
        self.out("l2_normalize", out, vec![m, n], backward)
    }

    /// Mean over rows: (m×n) → (1×n).
    pub fn mean_rows(&self, x: &Tensor) -> Result<Tensor> {
        let (m, n) = x.dims2()?;
        if m == 0 {
            return Err(NumericsError::DegenerateInput {
                op: "mean_rows",
                details: "zero rows".into(),
            });
        }
        let xv = x.data();
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += xv[i * n + j];
            }
        }
        for o in out.iter_mut() {
            *o /= m as f64;
        }
        let x_node = x.node;
        let backward = self.bwd(x_node.is_some(), move |g, slots| {
            if let Some(id) = x_node {
                accumulate(slots, id, m * n, |dx| {
                    for i in 0..m {
                        for j in 0..n {
                            dx[i * n + j] += g[j] / m as f64;
                        }
                    }
                });
            }
        });
        self.out("mean_rows", out, vec![1, n], backward)
    }

    pub fn mean_all(&self, x: &Tensor) -> Result<Tensor> {
        let numel = x.len();
        if numel == 0 {
            return Err(NumericsError::DegenerateInput { op: "mean_all", details: "empty tensor".into() });
        }
        let v = x.data().iter().sum::<f64>() / numel as f64;
        let x_node = x.node;
        let backward = self.bwd(x_node.is_some(), move |g, slots| {
            if let Some(id) = x_node {
                accumulate(slots, id, numel, |dx| {
                    for d in dx.iter_mut() {
                        *d += g[0] / numel as f64;
                    }
                });
            }
        });
        self.out("mean_all", vec![v], vec![], backward)
    }

    pub fn sum_all(&self, x: &Tensor) -> Result<Tensor> {
        let numel = x.len();
        let v = x.data().iter().sum::<f64>();
        let x_node = x.node;
        let backward = self.bwd(x_node.is_some(), move |g, slots| {
            if let Some(id) = x_node {
                accumulate(slots, id, numel, |dx| {
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                });
            }
        });
        self.out("sum_all", vec![v], vec![], backward)
    }

    /// Stack rank-2 tensors with equal column counts along the row axis.
    /// Backward splits the gradient exactly at the row boundaries.
    pub fn concat_rows(&self, parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(NumericsError::DegenerateInput { op: "concat_rows", details: "no inputs".into() });
        }
        let (_, n) = parts[0].dims2()?;
        let mut rows = 0;
        for p in parts {
            let (m, c) = p.dims2()?;
            if c != n {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_rows",
                    details: format!("column mismatch: {c} vs {n}"),
                });
            }
            rows += m;
        }
        let mut out = Vec::with_capacity(rows * n);
        for p in parts {
            out.extend_from_slice(p.data());
        }
        let pieces: Vec<(Option<usize>, usize)> = parts.iter().map(|p| (p.node, p.len())).collect();
        let backward = self.bwd(pieces.iter().any(|(id, _)| id.is_some()), move |g, slots| {
            let mut offset = 0;
            for (id, numel) in &pieces {
                if let Some(id) = id {
                    let seg = &g[offset..offset + numel];
                    accumulate(slots, *id, *numel, |dx| {
                        for (d, gv) in dx.iter_mut().zip(seg) {
                            *d += gv;
                        }
                    });
                }
                offset += numel;
            }
        });
        self.out("concat_rows", out, vec![rows, n], backward)
    }

    /// Stack rank-2 tensors with equal row counts along the column axis.
    pub fn concat_cols(&self, parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(NumericsError::DegenerateInput { op: "concat_cols", details: "no inputs".into() });
        }
        let (m, _) = parts[0].dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for p in parts {
            let (r, c) = p.dims2()?;
            if r != m {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_cols",
                    details: format!("row mismatch: {r} vs {m}"),
                });
            }
            widths.push(c);
            total += c;
        }
        let mut out = vec![0.0; m * total];
        let mut col = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let pv = p.data();
            for i in 0..m {
                out[i * total + col..i * total + col + w].copy_from_slice(&pv[i * w..(i + 1) * w]);
            }
            col += w;
        }
        let pieces: Vec<(Option<usize>, usize)> = parts.iter().map(|p| (p.node, p.len())).collect();
        let widths2 = widths.clone();
        let backward = self.bwd(pieces.iter().any(|(id, _)| id.is_some()), move |g, slots| {
            let mut col = 0;
            for ((id, numel), &w) in pieces.iter().zip(&widths2) {
                if let Some(id) = id {
                    accumulate(slots, *id, *numel, |dx| {
                        for i in 0..m {
                            for j in 0..w {
                                dx[i * w + j] += g[i * total + col + j];
                            }
                        }
                    });
                }
                col += w;
            }
        });
        self.out("concat_cols", out, vec![m, total], backward)
    }

    /// Gather rows by index (embedding lookup, logit-row selection).
    /// Backward scatter-adds into the source rows.
    pub fn select_rows(&self, x: &Tensor, indices: &[usize]) -> Result<Tensor> {
        let (r, c) = x.dims2()?;
        for &i in indices {
            if i >= r {
                return Err(NumericsError::ShapeMismatch {
                    op: "select_rows",
                    details: format!("index {i} out of {r} rows"),
                });
            }
        }
        let xv = x.data();
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            out.extend_from_slice(&xv[i * c..(i + 1) * c]);
        }
        let x_node = x.node;
        let idx: Vec<usize> = indices.to_vec();
        let backward = self.bwd(x_node.is_some(), move |g, slots| {
            if let Some(id) = x_node {
                accumulate(slots, id, r * c, |dx| {
                    for (row, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            dx[i * c + j] += g[row * c + j];
                        }
                    }
                });
            }
        });
        self.out("select_rows", out, vec![indices.len(), c], backward)
    }

    /// Contiguous column slice of a rank-2 tensor.
    pub fn slice_cols(&self, x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        let (m, n) = x.dims2()?;
        if start + len > n {
            return Err(NumericsError::ShapeMismatch {
                op: "slice_cols",
                details: format!("slice {start}..{} of {n} columns", start + len),
            });
        }
        let xv = x.data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&xv[i * n + start..i * n + start + len]);
        }
        let x_node = x.node;
        let backward = self.bwd(x_node.is_some(), move |g, slots| {
            if let Some(id) = x_node {
                accumulate(slots, id, m * n, |dx| {
                    for i in 0..m {
                        for j in 0..len {
                            dx[i * n + start + j] += g[i * len + j];
                        }
                    }
                });
            }
        });
        self.out("slice_cols", out, vec![m, len], backward)
    }

    /// Fused softmax + cross-entropy per row: returns the per-row losses.
    /// Backward is softmax(z) − onehot(target), scaled by the row's upstream
    /// gradient.
    pub fn softmax_cross_entropy(&self, logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
        let (m, v) = logits.dims2()?;
        if targets.len() != m {
            return Err(NumericsError::ShapeMismatch {
                op: "softmax_cross_entropy",
                details: format!("{m} rows vs {} targets", targets.len()),
            });
        }
        for &t in targets {
            if t >= v {
                return Err(NumericsError::ShapeMismatch {
                    op: "softmax_cross_entropy",
                    details: format!("target {t} out of {v} classes"),
                });
            }
        }
        let zv = logits.data();
        let mut losses = vec![0.0; m];
        let mut probs = vec![0.0; m * v];
        for i in 0..m {
            let row = &zv[i * v..(i + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (p, &z) in probs[i * v..(i + 1) * v].iter_mut().zip(row) {
                *p = (z - max).exp();
                sum += *p;
            }
            for p in probs[i * v..(i + 1) * v].iter_mut() {
                *p /= sum;
            }
            losses[i] = max + sum.ln() - row[targets[i]];
        }
        let z_node = logits.node;
        let probs = Arc::new(probs);
        let tgt: Vec<usize> = targets.to_vec();
        let backward = self.bwd(z_node.is_some(), move |g, slots| {
            if let Some(id) = z_node {
                accumulate(slots, id, m * v, |dz| {
                    for i in 0..m {
                        for j in 0..v {
                            let onehot = if j == tgt[i] { 1.0 } else { 0.0 };
                            dz[i * v + j] += g[i] * (probs[i * v + j] - onehot);
                        }
                    }
                });
            }
        });
        self.out("softmax_cross_entropy", losses, vec![m], backward)
    }

    /// Inverted dropout. Identity in eval mode or at p = 0; in training mode
    /// the kept entries are scaled by 1/(1−p). The mask is drawn from `rng`
    /// and stored in the backward closure, so the forward pass is exactly
    /// reproducible from the seed.
    pub fn dropout<R: Rng>(&self, x: &Tensor, p: f64, training: bool, rng: &mut R) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumericsError::Param(format!("dropout probability {p} outside [0,1)")));
        }
        if !training || p == 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let out: Vec<f64> = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let x_node = x.node;
        let numel = out.len();
        let mask = Arc::new(mask);
        let backward = self.bwd(x_node.is_some(), move |g, slots| {
            if let Some(id) = x_node {
                accumulate(slots, id, numel, |dx| {
                    for (d, (gv, mv)) in dx.iter_mut().zip(g.iter().zip(mask.iter())) {
                        *d += gv * mv;
                    }
                });
            }
        });
        self.out("dropout", out, x.shape().to_vec(), backward)
    }

    /// Sum across a list of scalar tensors, then divide by the count.
    pub fn mean_of_scalars(&self, parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(NumericsError::DegenerateInput { op: "mean_of_scalars", details: "no inputs".into() });
        }
        let mut acc = parts[0].clone();
        for p in &parts[1..] {
            acc = self.add(&acc, p)?;
        }
        self.scale(&acc, 1.0 / parts.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ParamSet;

    fn tape() -> Tape {
        Tape::recording()
    }

    #[test]
    fn gelu_is_zero_at_zero() {
        let t = tape();
        let x = Tensor::vector(vec![0.0]);
        let x = Tensor::new(x.to_vec(), vec![1, 1]).unwrap();
        let y = t.gelu(&x).unwrap();
        assert_eq!(y.data()[0], 0.0);
    }

    #[test]
    fn l2_normalize_345_triangle() {
        let t = tape();
        let x = Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap();
        let y = t.l2_normalize_rows(&x).unwrap();
        assert!((y.data()[0] - 0.6).abs() < 1e-15);
        assert!((y.data()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn l2_normalize_zero_row_errors() {
        let t = tape();
        let x = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            t.l2_normalize_rows(&x),
            Err(NumericsError::DegenerateInput { .. })
        ));
    }

    #[test]
    fn softmax_uniform_logits() {
        let t = tape();
        let x = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let y = t.softmax_rows(&x).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_cross_entropy_gradient_matches_softmax_minus_onehot() {
        // d/dz CE(z=[0,0], target 0) = [-0.5, +0.5]
        let mut set = ParamSet::new();
        set.add("z", vec![1, 2], vec![0.0, 0.0], true).unwrap();
        let t = tape();
        let z = t.param(&set, "z").unwrap();
        let losses = t.softmax_cross_entropy(&z, &[0]).unwrap();
        let loss = t.mean_all(&losses).unwrap();
        let grads = t.backward(&loss).unwrap();
        let g = grads.get("z").unwrap();
        assert!((g[0] + 0.5).abs() < 1e-15);
        assert!((g[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let t = tape();
        let a = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        let b = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(t.matmul(&a, &b), Err(NumericsError::ShapeMismatch { .. })));
    }

    #[test]
    fn batch_norm_normalizes_per_feature() {
        // training-mode output, before affine: per-feature mean ~0, var ~1
        let t = tape();
        let b = 16;
        let f = 3;
        let data: Vec<f64> = (0..b * f).map(|i| (i as f64 * 0.7).sin() * 3.0 + 1.5).collect();
        let x = Tensor::matrix(b, f, data).unwrap();
        let gamma = Tensor::vector(vec![1.0; f]);
        let beta = Tensor::vector(vec![0.0; f]);
        let (y, stats) = t.batch_norm_train(&x, &gamma, &beta, 1e-9).unwrap();
        for j in 0..f {
            let col: Vec<f64> = (0..b).map(|i| y.data()[i * f + j]).collect();
            let mean = col.iter().sum::<f64>() / b as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / b as f64;
            assert!(mean.abs() < 1e-6, "feature {j} mean {mean}");
            assert!((var - 1.0).abs() < 1e-5, "feature {j} var {var}");
        }
        assert_eq!(stats.mean.len(), f);
    }

    #[test]
    fn batch_norm_requires_two_rows_in_training() {
        let t = tape();
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let gamma = Tensor::vector(vec![1.0; 2]);
        let beta = Tensor::vector(vec![0.0; 2]);
        assert!(t.batch_norm_train(&x, &gamma, &beta, 1e-5).is_err());
    }

    #[test]
    fn dropout_eval_is_identity_and_train_reproducible() {
        use rand::SeedableRng;
        let t = tape();
        let x = Tensor::matrix(4, 4, (0..16).map(|i| i as f64).collect()).unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let eval = t.dropout(&x, 0.5, false, &mut rng).unwrap();
        assert_eq!(eval.data(), x.data());

        let mut r1 = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let mut r2 = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let a = t.dropout(&x, 0.5, true, &mut r1).unwrap();
        let b = t.dropout(&x, 0.5, true, &mut r2).unwrap();
        assert_eq!(a.data(), b.data());
        // inverted dropout: kept entries scaled by 2
        for (orig, v) in x.data().iter().zip(a.data()) {
            assert!(*v == 0.0 || (*v - orig * 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_backward_splits_exactly() {
        let mut set = ParamSet::new();
        set.add("a", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0], true).unwrap();
        set.add("b", vec![1, 2], vec![5.0, 6.0], true).unwrap();
        let t = tape();
        let a = t.param(&set, "a").unwrap();
        let b = t.param(&set, "b").unwrap();
        let cat = t.concat_rows(&[&a, &b]).unwrap();
        // loss = sum(cat * w) with distinct weights so gradients are distinct
        let w = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let prod = t.mul(&cat, &w).unwrap();
        let loss = t.sum_all(&prod).unwrap();
        let grads = t.backward(&loss).unwrap();
        let ga = grads.get("a").unwrap();
        let gb = grads.get("b").unwrap();
        assert_eq!(ga, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(gb, &[5.0, 6.0]);
        // norm identity: |g_cat|^2 = |g_a|^2 + |g_b|^2
        let cat_sq: f64 = w.data().iter().map(|v| v * v).sum();
        let split_sq: f64 = ga.iter().chain(gb).map(|v| v * v).sum();
        assert!((cat_sq - split_sq).abs() < 1e-12);
    }
}
