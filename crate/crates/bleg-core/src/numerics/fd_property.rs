//! Randomized finite-difference agreement for every recorded op.

#![cfg(test)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use super::gradcheck::check_gradient;
use super::params::ParamSet;
use super::tape::Tape;
use super::tensor::Tensor;
use super::Result;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-3;

fn gauss(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn dims(rng: &mut ChaCha12Rng) -> (usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..5))
}

/// Build a random scenario for op `which`, returning the parameter set and a
/// scalar loss closure over it.
fn scenario(
    which: usize,
    rng: &mut ChaCha12Rng,
) -> (ParamSet, Box<dyn Fn(&Tape, &ParamSet) -> Result<Tensor>>) {
    let mut set = ParamSet::new();
    match which {
        0 => {
            // matmul
            let (m, k) = dims(rng);
            let n = rng.random_range(1..5);
            set.add("a", vec![m, k], gauss(rng, m * k), true).unwrap();
            set.add("b", vec![k, n], gauss(rng, k * n), true).unwrap();
            let w = Tensor::matrix(m, n, gauss(rng, m * n)).unwrap();
            (set, Box::new(move |t, s| {
                let a = t.param(s, "a")?;
                let b = t.param(s, "b")?;
                let c = t.matmul(&a, &b)?;
                t.sum_all(&t.mul(&c, &w)?)
            }))
        }
        1 => {
            // transpose + add
            let (m, n) = dims(rng);
            set.add("a", vec![m, n], gauss(rng, m * n), true).unwrap();
            set.add("b", vec![n, m], gauss(rng, m * n), true).unwrap();
            let w = Tensor::matrix(n, m, gauss(rng, m * n)).unwrap();
            (set, Box::new(move |t, s| {
                let a = t.param(s, "a")?;
                let b = t.param(s, "b")?;
                let c = t.add(&t.transpose(&a)?, &b)?;
                t.sum_all(&t.mul(&c, &w)?)
            }))
        }
        2 => {
            // sub + mul + scale
            let (m, n) = dims(rng);
            set.add("a", vec![m, n], gauss(rng, m * n), true).unwrap();
            set.add("b", vec![m, n], gauss(rng, m * n), true).unwrap();
            (set, Box::new(move |t, s| {
                let a = t.param(s, "a")?;
                let b = t.param(s, "b")?;
                let d = t.sub(&a, &b)?;
                let p = t.mul(&d, &a)?;
                t.mean_all(&t.scale(&p, 1.7)?)
            }))
        }
        3 => {
            // gelu
            let (m, n) = dims(rng);
            set.add("x", vec![m, n], gauss(rng, m * n), true).unwrap();
            (set, Box::new(move |t, s| {
                let x = t.param(s, "x")?;
                t.sum_all(&t.gelu(&x)?)
            }))
        }
        4 => {
            // softmax
            let (m, n) = (rng.random_range(1..4), rng.random_range(2..5));
            set.add("x", vec![m, n], gauss(rng, m * n), true).unwrap();
            let w = Tensor::matrix(m, n, gauss(rng, m * n)).unwrap();
            (set, Box::new(move |t, s| {
                let x = t.param(s, "x")?;
                let y = t.softmax_rows(&x)?;
                t.sum_all(&t.mul(&y, &w)?)
            }))
        }
        5 => {
            // layer norm
            let (m, n) = (rng.random_range(1..4), rng.random_range(2..5));
            set.add("x", vec![m, n], gauss(rng, m * n), true).unwrap();
            set.add("g", vec![n], gauss(rng, n), true).unwrap();
            set.add("be", vec![n], gauss(rng, n), true).unwrap();
            let w = Tensor::matrix(m, n, gauss(rng, m * n)).unwrap();
            (set, Box::new(move |t, s| {
                let x = t.param(s, "x")?;
                let g = t.param(s, "g")?;
                let b = t.param(s, "be")?;
                let y = t.layer_norm(&x, &g, &b, 1e-5)?;
                t.sum_all(&t.mul(&y, &w)?)
            }))
        }
        6 => {
            // batch norm, training mode
            let (m, n) = (rng.random_range(2..6), rng.random_range(1..4));
            set.add("x", vec![m, n], gauss(rng, m * n), true).unwrap();
            set.add("g", vec![n], gauss(rng, n), true).unwrap();
            set.add("be", vec![n], gauss(rng, n), true).unwrap();
            let w = Tensor::matrix(m, n, gauss(rng, m * n)).unwrap();
            (set, Box::new(move |t, s| {
                let x = t.param(s, "x")?;
                let g = t.param(s, "g")?;
                let b = t.param(s, "be")?;
                let (y, _) = t.batch_norm_train(&x, &g, &b, 1e-5)?;
                t.sum_all(&t.mul(&y, &w)?)
            }))
        }
        7 => {
            // batch norm, eval mode
            let (m, n) = dims(rng);
            set.add("x", vec![m, n], gauss(rng, m * n), true).unwrap();
            set.add("g", vec![n], gauss(rng, n), true).unwrap();
            set.add("be", vec![n], gauss(rng, n), true).unwrap();
            let rm = gauss(rng, n);
            let rv: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..2.0)).collect();
            let w = Tensor::matrix(m, n, gauss(rng, m * n)).unwrap();
            (set, Box::new(move |t, s| {
                let x = t.param(s, "x")?;
                let g = t.param(s, "g")?;
                let b = t.param(s, "be")?;
                let y = t.batch_norm_eval(&x, &g, &b, &rm, &rv, 1e-5)?;
                t.sum_all(&t.mul(&y, &w)?)
            }))
        }
        8 => {
            // l2 normalize (rows kept away from zero norm)
            let (m, n) = dims(rng);
            let mut data = gauss(rng, m * n);
            for i in 0..m {
                let norm: f64 = data[i * n..(i + 1) * n].iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm < 0.5 {
                    for v in &mut data[i * n..(i + 1) * n] {
                        *v += 1.0;
                    }
                }
            }
            set.add("x", vec![m, n], data, true).unwrap();
            let w = Tensor::matrix(m, n, gauss(rng, m * n)).unwrap();
            (set, Box::new(move |t, s| {
                let x = t.param(s, "x")?;
                let y = t.l2_normalize_rows(&x)?;
                t.sum_all(&t.mul(&y, &w)?)
            }))
        }
        9 => {
            // reductions: mean_rows then mean_all
            let (m, n) = dims(rng);
            set.add("x", vec![m, n], gauss(rng, m * n), true).unwrap();
            let w = Tensor::matrix(1, n, gauss(rng, n)).unwrap();
            (set, Box::new(move |t, s| {
                let x = t.param(s, "x")?;
                let y = t.mean_rows(&x)?;
                t.mean_all(&t.mul(&y, &w)?)
            }))
        }
        10 => {
            // concat_rows + select_rows
            let n = rng.random_range(1..4);
            let (m1, m2) = (rng.random_range(1..4), rng.random_range(1..4));
            set.add("a", vec![m1, n], gauss(rng, m1 * n), true).unwrap();
            set.add("b", vec![m2, n], gauss(rng, m2 * n), true).unwrap();
            let take: Vec<usize> = (0..m1 + m2).filter(|_| rng.random::<bool>()).collect();
            let take = if take.is_empty() { vec![0] } else { take };
            let w = Tensor::matrix(take.len(), n, gauss(rng, take.len() * n)).unwrap();
            (set, Box::new(move |t, s| {
                let a = t.param(s, "a")?;
                let b = t.param(s, "b")?;
                let cat = t.concat_rows(&[&a, &b])?;
                let sel = t.select_rows(&cat, &take)?;
                t.sum_all(&t.mul(&sel, &w)?)
            }))
        }
        11 => {
            // concat_cols + slice_cols
            let m = rng.random_range(1..4);
            let (n1, n2) = (rng.random_range(1..4), rng.random_range(1..4));
            set.add("a", vec![m, n1], gauss(rng, m * n1), true).unwrap();
            set.add("b", vec![m, n2], gauss(rng, m * n2), true).unwrap();
            let start = rng.random_range(0..n1 + n2);
            let len = rng.random_range(1..=(n1 + n2 - start));
            let w = Tensor::matrix(m, len, gauss(rng, m * len)).unwrap();
            (set, Box::new(move |t, s| {
                let a = t.param(s, "a")?;
                let b = t.param(s, "b")?;
                let cat = t.concat_cols(&[&a, &b])?;
                let sl = t.slice_cols(&cat, start, len)?;
                t.sum_all(&t.mul(&sl, &w)?)
            }))
        }
        12 => {
            // fused softmax cross-entropy
            let (m, v) = (rng.random_range(1..4), rng.random_range(2..6));
            set.add("z", vec![m, v], gauss(rng, m * v), true).unwrap();
            let targets: Vec<usize> = (0..m).map(|_| rng.random_range(0..v)).collect();
            (set, Box::new(move |t, s| {
                let z = t.param(s, "z")?;
                let losses = t.softmax_cross_entropy(&z, &targets)?;
                t.mean_all(&losses)
            }))
        }
        13 => {
            // add_bias
            let (m, n) = dims(rng);
            set.add("x", vec![m, n], gauss(rng, m * n), true).unwrap();
            set.add("b", vec![n], gauss(rng, n), true).unwrap();
            (set, Box::new(move |t, s| {
                let x = t.param(s, "x")?;
                let b = t.param(s, "b")?;
                t.sum_all(&t.add_bias(&x, &b)?)
            }))
        }
        _ => {
            // dropout with frozen mask (reseeded rng each call)
            let (m, n) = dims(rng);
            set.add("x", vec![m, n], gauss(rng, m * n), true).unwrap();
            let seed: u64 = rng.random();
            (set, Box::new(move |t, s| {
                let x = t.param(s, "x")?;
                let mut mask_rng = ChaCha12Rng::seed_from_u64(seed);
                let y = t.dropout(&x, 0.4, true, &mut mask_rng)?;
                t.sum_all(&y)
            }))
        }
    }
}

#[test]
fn every_op_matches_finite_differences_on_random_shapes() {
    let mut rng = ChaCha12Rng::seed_from_u64(0x5eed);
    let n_ops = 15;
    let instances = 150; // 10 per op family
    for case in 0..instances {
        let which = case % n_ops;
        let (set, loss_fn) = scenario(which, &mut rng);
        let report = check_gradient(|t| loss_fn(t, &set), &[&set], STEP, TOL).unwrap();
        assert!(
            report.pass,
            "op case {which} instance {case} failed: {:?}",
            report.worst()
        );
    }
}

#[test]
fn two_layer_network_gradient_matches_finite_differences() {
    // random 2-layer net: gelu(x·W1 + b1)·W2 + b2, squared-error loss
    let mut rng = ChaCha12Rng::seed_from_u64(77);
    let (batch, din, dh, dout) = (3, 4, 5, 2);
    let mut set = ParamSet::new();
    set.add("w1", vec![din, dh], gauss(&mut rng, din * dh), true).unwrap();
    set.add("b1", vec![dh], gauss(&mut rng, dh), true).unwrap();
    set.add("w2", vec![dh, dout], gauss(&mut rng, dh * dout), true).unwrap();
    set.add("b2", vec![dout], gauss(&mut rng, dout), true).unwrap();
    let x = Tensor::matrix(batch, din, gauss(&mut rng, batch * din)).unwrap();
    let y = Tensor::matrix(batch, dout, gauss(&mut rng, batch * dout)).unwrap();

    let report = check_gradient(
        |t| {
            let w1 = t.param(&set, "w1")?;
            let b1 = t.param(&set, "b1")?;
            let w2 = t.param(&set, "w2")?;
            let b2 = t.param(&set, "b2")?;
            let h = t.gelu(&t.add_bias(&t.matmul(&x, &w1)?, &b1)?)?;
            let out = t.add_bias(&t.matmul(&h, &w2)?, &b2)?;
            let diff = t.sub(&out, &y)?;
            t.mean_all(&t.mul(&diff, &diff)?)
        },
        &[&set],
        STEP,
        TOL,
    )
    .unwrap();
    assert!(report.pass, "worst: {:?}", report.worst());
}
