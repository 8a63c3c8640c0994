//! Loop-based reference implementations and small fixtures shared by the
//! integration suites. The reference implementations avoid library code paths.
#![allow(dead_code)]

use outfitsynth::config::RunConfig;
use outfitsynth::gradcheck::max_error_against;
use outfitsynth::nn::{ParamId, ParamStore};
use outfitsynth::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Cosine similarity between every position pair of two `[c][h·w]` maps,
/// with `eps` added to each norm. Result is `[u][v]`, row-major.
pub fn correspondence_loop(fx: &[f64], fy: &[f64], c: usize, hw: usize, eps: f64) -> Vec<f64> {
    let mut m = vec![0.0; hw * hw];
    for u in 0..hw {
        for v in 0..hw {
            let (mut dot, mut nx, mut ny) = (0.0, 0.0, 0.0);
            for k in 0..c {
                let (a, b) = (fx[k * hw + u], fy[k * hw + v]);
                dot += a * b;
                nx += a * a;
                ny += b * b;
            }
            m[u * hw + v] = dot / ((nx.sqrt() + eps) * (ny.sqrt() + eps));
        }
    }
    m
}

/// Softmax over `v` of each row of `m`, applied to source vectors `[c][hw]`.
pub fn align_loop(src: &[f64], m: &[f64], c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * hw];
    for u in 0..hw {
        let row = &m[u * hw..(u + 1) * hw];
        let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&x| (x - top).exp()).sum();
        for v in 0..hw {
            let w = (row[v] - top).exp() / z;
            for k in 0..c {
                out[k * hw + u] += w * src[k * hw + v];
            }
        }
    }
    out
}

/// Bidirectional next-item cross-entropy. `f[b][n]` are item embeddings,
/// `fwd[t][b]` predicts item `t + 1`, `bwd[t][b]` predicts item `t`.
pub fn ccm_loss_loop(fwd: &[Vec<Vec<f64>>], bwd: &[Vec<Vec<f64>>], f: &[Vec<Vec<f64>>]) -> f64 {
    let (b, n) = (f.len(), f[0].len());
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let mut total = 0.0;
    for (states, offset) in [(fwd, 1usize), (bwd, 0usize)] {
        for (t, per_batch) in states.iter().enumerate() {
            for bi in 0..b {
                let h = &per_batch[bi];
                let mut logits = Vec::new();
                for ob in f {
                    for item in ob {
                        logits.push(dot(h, item));
                    }
                }
                let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = top + logits.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
                total += lse - logits[bi * n + t + offset];
            }
        }
    }
    total / ((n - 1) * b) as f64
}

/// Mean over item pairs of the mean absolute pixel difference.
pub fn l1_loop(synth: &[Vec<f64>], target: &[Vec<f64>]) -> f64 {
    let mut acc = 0.0;
    for (s, t) in synth.iter().zip(target) {
        let mut d = 0.0;
        for i in 0..s.len() {
            d += (s[i] - t[i]).abs();
        }
        acc += d / s.len() as f64;
    }
    acc / synth.len() as f64
}

/// Mean SSIM over every 11×11 window, each evaluated directly with 2-D
/// Gaussian weights (σ = 1.5), on single-channel `[0, 1]` images.
pub fn ssim_window_loop(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    const K: usize = 11;
    let (c1, c2) = ((0.01f64).powi(2), (0.03f64).powi(2));
    let mut wts = [[0.0; K]; K];
    let mut z = 0.0;
    for (i, row) in wts.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            z += *v;
        }
    }
    let mut sum = 0.0;
    let mut count = 0;
    for y in 0..=h - K {
        for x in 0..=w - K {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..K {
                for j in 0..K {
                    let p = (y + i) * w + x + j;
                    mx += wts[i][j] / z * a[p];
                    my += wts[i][j] / z * b[p];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..K {
                for j in 0..K {
                    let p = (y + i) * w + x + j;
                    let wt = wts[i][j] / z;
                    vx += wt * (a[p] - mx).powi(2);
                    vy += wt * (b[p] - my).powi(2);
                    cxy += wt * (a[p] - mx) * (b[p] - my);
                }
            }
            sum += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    sum / count as f64
}

/// Small 32 px model for fast end-to-end runs.
pub fn tiny_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.image_size = 32;
    c.generator.widths = vec![4, 4, 8, 8];
    c.generator.res_blocks = 1;
    c.sam.channels = 4;
    c.discriminator.widths = vec![4, 8, 8, 8];
    c.ccm.widths = vec![4, 4, 4, 4];
    c.ccm.embed_dim = 8;
    c.perceptual.widths = vec![4, 4, 4, 4];
    c.maskgen.widths = vec![4, 8, 8];
    c.maskgen.res_blocks = 1;
    c.maskgen.disc_widths = vec![4, 8, 8];
    c.train.batch_size = 2;
    c.train.crop_margin = 0.0;
    c
}

pub fn weights(n: usize, seed: u64) -> Vec<f64> {
    uniform(&mut rng(seed), n, -1.0, 1.0)
}

/// `Σ x ⊙ w` for fixed random `w`, so no symmetry cancels a gradient.
pub fn probe(x: &Tensor<f64>, seed: u64) -> Tensor<f64> {
    x.mul(&Tensor::from_vec(weights(x.numel(), seed), x.shape())).sum_all()
}

/// Worst relative error over `coords` of one parameter tensor of a model.
pub fn param_error<M: Clone>(
    model: &M,
    store: fn(&mut M) -> &mut ParamStore<f64>,
    id: ParamId,
    coords: &[usize],
    loss: &dyn Fn(&M) -> Tensor<f64>,
) -> f64 {
    let mut m = model.clone();
    let analytic = loss(&m).backward().wrt(store(&mut m).get(id));
    let x0 = store(&mut m).get(id).to_vec();
    max_error_against(
        &analytic,
        &mut |v| {
            let mut p = model.clone();
            store(&mut p).set(id, v.to_vec());
            loss(&p).item()
        },
        &x0,
        coords,
    )
}

/// GAN-style init leaves gradients near the round-off floor of central
/// differences; checks run with weights lifted to unit scale.
pub fn lift(ps: &mut ParamStore<f64>) {
    for id in ps.ids().collect::<Vec<_>>() {
        let v = ps.get(id).to_vec().into_iter().map(|x| x * 25.0).collect();
        ps.set(id, v);
    }
}

pub fn first_in_group(ps: &ParamStore<f64>, prefix: &str) -> ParamId {
    ps.ids().find(|&id| ps.name(id).starts_with(prefix) && ps.get(id).numel() > 1).unwrap_or_else(|| panic!("no parameter under {prefix}"))
}
