//! Collocation classifier: a conv item embedder feeding a bidirectional LSTM
//! that predicts each item from its neighbours against every item in the
//! batch.

use crate::config::RunConfig;
use crate::data::{Corpus, Split};
use crate::domain::{stack_outfits, Outfit};
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Act, Builder, ConvBlock, Linear, LstmCell, ParamStore, Sgd};
use crate::tensor::{Float, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct Ccm<T: Float> {
    pub params: ParamStore<T>,
    blocks: Vec<ConvBlock>,
    fc: Linear,
    forward_cell: LstmCell,
    backward_cell: LstmCell,
    pub embed_dim: usize,
    image_size: usize,
}

impl<T: Float> Ccm<T> {
    pub fn new(cfg: &RunConfig) -> Self {
        let mut params = ParamStore::new();
        let mut rng = seeded_rng(cfg.seed, "ccm");
        let mut b = Builder::new(&mut params, &mut rng);
        let w = &cfg.ccm.widths;
        let blocks = (0..4)
            .map(|i| {
                let ci = if i == 0 { 3 } else { w[i - 1] };
                ConvBlock::new(&mut b.pp(&format!("embed.{i}")), ci, w[i], 4, 2, 1, false, Act::LeakyRelu(0.2))
            })
            .collect();
        let side = cfg.image_size / 16;
        let d = cfg.ccm.embed_dim;
        let fc = Linear::new(&mut b.pp("embed.fc"), w[3] * side * side, d);
        let forward_cell = LstmCell::new(&mut b.pp("lstm.forward"), d, d);
        let backward_cell = LstmCell::new(&mut b.pp("lstm.backward"), d, d);
        Self { params, blocks, fc, forward_cell, backward_cell, embed_dim: d, image_size: cfg.image_size }
    }

    /// `[B,3,S,S]` to `[B, D]`.
    pub fn embed(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.image_size;
        if x.rank() != 4 || x.shape()[1..] != [3, s, s] {
            return Err(Error::SizeMismatch(format!("embedder expects [B, 3, {s}, {s}], got {:?}", x.shape())));
        }
        let h = self.blocks.iter().fold(x.clone(), |h, b| b.forward(&self.params, &h));
        let flat = h.reshape(&[h.dim(0), h.numel() / h.dim(0)]);
        Ok(self.fc.forward(&self.params, &flat))
    }

    /// Embeds position-major item stacks into `[B, N, D]`.
    pub fn embed_sequence(&self, items: &[Tensor<T>]) -> Result<Tensor<T>> {
        let parts = items
            .iter()
            .map(|x| {
                let e = self.embed(x)?;
                Ok(e.reshape(&[e.dim(0), 1, e.dim(1)]))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&parts, 1))
    }

    /// Forward states predicting items `2..=N` and backward states predicting
    /// items `1..N`, each `[B, D]`, both listed by target position.
    pub fn hidden_states(&self, f: &Tensor<T>) -> Result<(Vec<Tensor<T>>, Vec<Tensor<T>>)> {
        let (b, n, d) = (f.dim(0), f.dim(1), f.dim(2));
        if n < 2 {
            return Err(Error::InvalidOutfit(format!("sequence of length {n} has no neighbours")));
        }
        let step = |i: usize| f.narrow(1, i, 1).reshape(&[b, d]);
        let mut fwd = Vec::with_capacity(n - 1);
        let mut state: Option<(Tensor<T>, Tensor<T>)> = None;
        for i in 0..n - 1 {
            let s = self.forward_cell.step(&self.params, &step(i), state.as_ref().map(|(h, c)| (h, c)));
            fwd.push(s.0.clone());
            state = Some(s);
        }
        let mut bwd = Vec::with_capacity(n - 1);
        let mut state: Option<(Tensor<T>, Tensor<T>)> = None;
        for i in (1..n).rev() {
            let s = self.backward_cell.step(&self.params, &step(i), state.as_ref().map(|(h, c)| (h, c)));
            bwd.push(s.0.clone());
            state = Some(s);
        }
        bwd.reverse();
        Ok((fwd, bwd))
    }

    /// Loss of a `[B, N, D]` embedding batch.
    pub fn loss(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        let (fwd, bwd) = self.hidden_states(f)?;
        Ok(ccm_loss_from_states(&fwd, &bwd, f))
    }

    /// Fraction of neighbour predictions whose top logit is the true item.
    pub fn retrieval_accuracy(&self, f: &Tensor<T>) -> Result<f64> {
        let (fwd, bwd) = self.hidden_states(f)?;
        let (b, n) = (f.dim(0), f.dim(1));
        let cands = f.reshape(&[b * n, f.dim(2)]);
        let mut hits = 0usize;
        let mut total = 0usize;
        for (states, offset) in [(&fwd, 1usize), (&bwd, 0usize)] {
            for (t, h) in states.iter().enumerate() {
                let logits = h.matmul_t(&cands);
                let row = logits.data();
                for bi in 0..b {
                    let r = &row[bi * b * n..(bi + 1) * b * n];
                    let best = (0..b * n).max_by(|&x, &y| r[x].as_f64().total_cmp(&r[y].as_f64()).then(y.cmp(&x))).unwrap();
                    hits += usize::from(best == bi * n + t + offset);
                    total += 1;
                }
            }
        }
        Ok(hits as f64 / total as f64)
    }

    /// Minus the loss of the outfit scored on its own.
    pub fn compatibility_score(&self, o: &Outfit) -> Result<f64> {
        let (items, _) = stack_outfits::<T>(std::slice::from_ref(o));
        Ok(-self.loss(&self.embed_sequence(&items)?)?.item().as_f64())
    }

    pub fn cast<U: Float>(&self) -> Ccm<U> {
        Ccm {
            params: self.params.cast(),
            blocks: self.blocks.clone(),
            fc: self.fc.clone(),
            forward_cell: self.forward_cell.clone(),
            backward_cell: self.backward_cell.clone(),
            embed_dim: self.embed_dim,
            image_size: self.image_size,
        }
    }
}

/// Cross-entropy of each neighbour state against all `B·N` candidates,
/// `-1/(N-1)` times the summed log-probabilities of both directions,
/// averaged over the batch.
pub fn ccm_loss_from_states<T: Float>(fwd: &[Tensor<T>], bwd: &[Tensor<T>], f: &Tensor<T>) -> Tensor<T> {
    let (b, n, d) = (f.dim(0), f.dim(1), f.dim(2));
    let cands = f.reshape(&[b * n, d]);
    let mut total: Option<Tensor<T>> = None;
    for (states, offset) in [(fwd, 1usize), (bwd, 0usize)] {
        let h = Tensor::cat(states, 0);
        let logp = h.matmul_t(&cands).log_softmax_last();
        let idx: Vec<usize> = (0..states.len()).flat_map(|t| (0..b).map(move |bi| bi * n + t + offset)).collect();
        let picked = logp.gather_rows(&idx).sum_all();
        total = Some(match total {
            Some(acc) => acc.add(&picked),
            None => picked,
        });
    }
    total.expect("two directions").scale(-1.0 / ((n - 1) * b) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcmEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct CcmPretrained {
    /// Parameters of the epoch with the lowest validation loss, frozen.
    pub ccm: Ccm<f32>,
    pub log: Vec<CcmEpoch>,
    pub best_epoch: usize,
}

fn batches(idx: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    idx.chunks(size).filter(|c| c.len() >= 2)
}

/// Mean validation `(loss, accuracy)` over fixed batches.
pub fn evaluate_ccm(ccm: &Ccm<f32>, corpus: &Corpus, cfg: &RunConfig, split: Split) -> Result<(f64, f64)> {
    let idx = corpus.indices(split);
    let (mut loss, mut acc, mut count) = (0.0, 0.0, 0usize);
    for chunk in batches(&idx, cfg.ccm.batch_size) {
        let outfits = chunk.iter().map(|&i| corpus.outfit(i, &cfg.order, cfg.given_index)).collect::<Result<Vec<_>>>()?;
        let (items, _) = stack_outfits::<f32>(&outfits);
        let f = ccm.embed_sequence(&items)?.detach();
        loss += ccm.loss(&f)?.item() as f64;
        acc += ccm.retrieval_accuracy(&f)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Corpus(format!("{split:?} split has fewer than two outfits")));
    }
    Ok((loss / count as f64, acc / count as f64))
}

/// Trains on the train split with SGD and keeps the epoch with the lowest
/// validation loss.
pub fn pretrain_ccm(corpus: &Corpus, cfg: &RunConfig, mut progress: impl FnMut(&CcmEpoch)) -> Result<CcmPretrained> {
    let mut ccm = Ccm::<f32>::new(cfg);
    let mut opt = Sgd::new(cfg.ccm.lr, cfg.ccm.momentum);
    let mut rng = seeded_rng(cfg.seed, "ccm/shuffle");
    let mut train = corpus.indices(Split::Train);
    if train.len() < 2 {
        return Err(Error::Corpus("train split needs at least two outfits".into()));
    }
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ParamStore<f32>)> = None;
    for epoch in 1..=cfg.ccm.epochs {
        train.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for (bi, chunk) in batches(&train, cfg.ccm.batch_size).enumerate() {
            let outfits = chunk.iter().map(|&i| corpus.outfit(i, &cfg.order, cfg.given_index)).collect::<Result<Vec<_>>>()?;
            let (items, _) = stack_outfits::<f32>(&outfits);
            let loss = ccm.loss(&ccm.embed_sequence(&items)?)?;
            let value = loss.item() as f64;
            if !value.is_finite() {
                return Err(Error::Divergence(format!("ccm loss {value} at epoch {epoch}, batch {bi}")));
            }
            let mut grads = loss.backward();
            if cfg.ccm.clip_norm > 0.0 {
                let norm = ccm.params.grad_norm(&grads);
                if norm > cfg.ccm.clip_norm {
                    grads.scale((cfg.ccm.clip_norm / norm) as f32);
                }
            }
            opt.step(&mut ccm.params, &grads);
            sum += value;
            count += 1;
        }
        let (val_loss, val_accuracy) = evaluate_ccm(&ccm, corpus, cfg, Split::Val)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence(format!("validation loss {val_loss} at epoch {epoch}")));
        }
        let rec = CcmEpoch { epoch, train_loss: sum / count.max(1) as f64, val_loss, val_accuracy };
        progress(&rec);
        log.push(rec);
        if best.as_ref().is_none_or(|(l, _, _)| val_loss < *l) {
            best = Some((val_loss, epoch, ccm.params.clone()));
        }
    }
    let (_, best_epoch, params) = best.ok_or_else(|| Error::Config("ccm.epochs must be at least 1".into()))?;
    ccm.params = params;
    ccm.params.freeze();
    Ok(CcmPretrained { ccm, log, best_epoch })
}

/// `epoch,train_loss,val_loss` rows.
pub fn write_ccm_log(path: &Path, log: &[CcmEpoch]) -> Result<()> {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for r in log {
        writeln!(s, "{},{},{}", r.epoch, r.train_loss, r.val_loss).expect("write to string");
    }
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut c = RunConfig::default();
        c.image_size = 32;
        c.ccm.widths = vec![2, 2, 2, 2];
        c.ccm.embed_dim = 5;
        c
    }

    #[test]
    fn zero_embeddings_give_uniform_loss() {
        let ccm = Ccm::<f64>::new(&tiny());
        let f = Tensor::zeros(&[3, 4, 5]);
        let l = ccm.loss(&f).unwrap().item();
        assert!((l - 2.0 * 12f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_item_sequences_have_one_state_each_way() {
        let ccm = Ccm::<f64>::new(&tiny());
        let (fwd, bwd) = ccm.hidden_states(&Tensor::full(0.1, &[2, 2, 5])).unwrap();
        assert_eq!((fwd.len(), bwd.len()), (1, 1));
        assert!(ccm.hidden_states(&Tensor::full(0.1, &[2, 1, 5])).is_err());
    }
}
