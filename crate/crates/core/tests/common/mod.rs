//! Independent reference implementations shared by the integration tests.
//! Everything here is plain loops over `f64`; nothing calls the tape.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swinfer::params::ParamStore;
use swinfer::swin::SwinConfig;
use swinfer::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.random_range(-scale..scale))
}

/// Replaces every parameter with uniform noise in `[-scale, scale)`; layer
/// norm gains are centred on 1.
pub fn randomize(store: &mut ParamStore<f64>, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for p in store.iter_mut() {
        let offset = if p.name.ends_with(".gain") { 1.0 } else { 0.0 };
        for v in p.value.data_mut() {
            *v = offset + r.random_range(-scale..scale);
        }
    }
}

pub fn value(store: &ParamStore<f64>, name: &str) -> Vec<f64> {
    store.get(store.id_of(name).unwrap_or_else(|| panic!("no parameter {name}"))).value.data().to_vec()
}

/// Row-wise layer norm with eps 1e-5.
pub fn layer_norm(x: &[f64], dim: usize, gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks(dim).zip(out.chunks_mut(dim)) {
        let mean = row.iter().sum::<f64>() / dim as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / dim as f64;
        let rstd = 1.0 / (var + 1e-5).sqrt();
        for i in 0..dim {
            o[i] = (row[i] - mean) * rstd * gain[i] + bias[i];
        }
    }
    out
}

/// `x[n, a] · w[a, b] + bias`.
pub fn affine(x: &[f64], a: usize, w: &[f64], b: usize, bias: Option<&[f64]>) -> Vec<f64> {
    let n = x.len() / a;
    let mut out = vec![0.0; n * b];
    for i in 0..n {
        for j in 0..b {
            let mut s = bias.map_or(0.0, |bb| bb[j]);
            for k in 0..a {
                s += x[i * a + k] * w[k * b + j];
            }
            out[i * b + j] = s;
        }
    }
    out
}

/// Band index of a coordinate in the shifted frame: `[0, n−w)`, `[n−w, n−s)`, `[n−s, n)`.
fn band(c: usize, n: usize, w: usize, s: usize) -> usize {
    if c < n - w {
        0
    } else if c < n - s {
        1
    } else {
        2
    }
}

/// Weights of one window-attention layer, as flat row-major buffers.
pub struct AttnWeights {
    pub qkv_w: Vec<f64>,
    pub qkv_b: Vec<f64>,
    pub proj_w: Vec<f64>,
    pub proj_b: Vec<f64>,
    /// `[(2w−1)², heads]`.
    pub rel_table: Vec<f64>,
}

impl AttnWeights {
    pub fn from_store(store: &ParamStore<f64>, prefix: &str) -> Self {
        AttnWeights {
            qkv_w: value(store, &format!("{prefix}.qkv.weight")),
            qkv_b: value(store, &format!("{prefix}.qkv.bias")),
            proj_w: value(store, &format!("{prefix}.proj.weight")),
            proj_b: value(store, &format!("{prefix}.proj.bias")),
            rel_table: value(store, &format!("{prefix}.rel_pos_bias")),
        }
    }
}

/// Shifted-window attention computed token by token in the original frame.
///
/// Token `i` at `(r, c)` sits at `((r−s) mod n, (c−s) mod n)` after the
/// cyclic shift. It may attend to `j` only if both fall in the same window
/// of the shifted frame and in the same band pair (so that wrapped-around
/// neighbours are excluded). Excluded keys are dropped from the softmax
/// entirely rather than masked.
pub fn sw_msa(x: &[f64], n: usize, dim: usize, heads: usize, w: usize, s: usize, wt: &AttnWeights) -> Vec<f64> {
    let tokens = n * n;
    let qkv = affine(x, dim, &wt.qkv_w, 3 * dim, Some(&wt.qkv_b));
    let d = dim / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let pos = |t: usize| ((t / n + n - s) % n, (t % n + n - s) % n);
    let region = |(r, c): (usize, usize)| (band(r, n, w, s), band(c, n, w, s));
    let window = |(r, c): (usize, usize)| (r / w, c / w);
    let mut attended = vec![0.0; tokens * dim];
    for i in 0..tokens {
        let pi = pos(i);
        let keys: Vec<usize> = (0..tokens)
            .filter(|&j| {
                let pj = pos(j);
                window(pj) == window(pi) && (s == 0 || region(pj) == region(pi))
            })
            .collect();
        for h in 0..heads {
            let mut logits = Vec::with_capacity(keys.len());
            for &j in &keys {
                let pj = pos(j);
                let mut dot = 0.0;
                for e in 0..d {
                    dot += qkv[i * 3 * dim + h * d + e] * scale * qkv[j * 3 * dim + dim + h * d + e];
                }
                let dy = (pi.0 % w) as isize - (pj.0 % w) as isize + w as isize - 1;
                let dx = (pi.1 % w) as isize - (pj.1 % w) as isize + w as isize - 1;
                let idx = dy as usize * (2 * w - 1) + dx as usize;
                logits.push(dot + wt.rel_table[idx * heads + h]);
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (k, &j) in keys.iter().enumerate() {
                for e in 0..d {
                    attended[i * dim + h * d + e] += exps[k] / z * qkv[j * 3 * dim + 2 * dim + h * d + e];
                }
            }
        }
    }
    affine(&attended, dim, &wt.proj_w, dim, Some(&wt.proj_b))
}

/// Accuracy and support-weighted precision, recall and F1 straight from
/// the (prediction, truth) pairs.
pub fn metrics_oracle(preds: &[usize], truths: &[usize], k: usize) -> [f64; 4] {
    let n = preds.len() as f64;
    let correct = preds.iter().zip(truths).filter(|(p, t)| p == t).count() as f64;
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    for c in 0..k {
        let tp = preds.iter().zip(truths).filter(|&(&p, &t)| p == c && t == c).count() as f64;
        let fp = preds.iter().zip(truths).filter(|&(&p, &t)| p == c && t != c).count() as f64;
        let fneg = preds.iter().zip(truths).filter(|&(&p, &t)| p != c && t == c).count() as f64;
        let support = tp + fneg;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if support > 0.0 { tp / support } else { 0.0 };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        wp += support / n * precision;
        wr += support / n * recall;
        wf += support / n * f1;
    }
    [correct / n, wp, wr, wf]
}

/// Norm of `w_t` for sharpness-aware plain gradient descent on `½‖w‖²`:
/// each step scales `w` by `1 − lr(1 + ρ/‖w‖)`, so
/// `‖w_{t+1}‖ + ρ = (1 − lr)(‖w_t‖ + ρ)` while `‖w‖` stays positive.
pub fn sam_quadratic_norm(r0: f64, lr: f64, rho: f64, t: usize) -> f64 {
    (r0 + rho) * (1.0 - lr).powi(t as i32) - rho
}

/// Small architecture for end-to-end gradient checks: 16×16 input, patch 2,
/// grids 8, 4, 2, 1 and window 2, so the first two stages shift.
pub fn micro_config() -> SwinConfig {
    SwinConfig {
        image_size: 16,
        patch_size: 2,
        in_channels: 3,
        embed_dim: 4,
        depths: [2, 2, 1, 1],
        num_heads: [1, 2, 2, 2],
        window_size: 2,
        mlp_ratio: 2,
        num_classes: 7,
        se_reduction: 4,
        use_se: true,
        drop_rate: 0.0,
    }
}
