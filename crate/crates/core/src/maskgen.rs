//! Reference-mask sources: trained image-to-mask translators and random
//! draws from the training split.

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{Corpus, Split};
use crate::discriminator::PatchDiscriminator;
use crate::domain::{BinaryMask, Category, ItemImage};
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Act, Adam, Builder, ConvBlock, ParamStore, ResBlock, UpBlock};
use crate::tensor::{Float, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Encoder, residual blocks and decoder ending in a sigmoid map.
#[derive(Debug, Clone)]
pub struct MaskTranslator<T: Float> {
    pub params: ParamStore<T>,
    pub category: Category,
    enc: Vec<ConvBlock>,
    res: Vec<ResBlock>,
    up: Vec<UpBlock>,
    out: UpBlock,
}

impl<T: Float> MaskTranslator<T> {
    pub fn new(cfg: &RunConfig, category: Category) -> Self {
        let mut params = ParamStore::new();
        let mut rng = seeded_rng(cfg.seed, &format!("maskgen/{category}"));
        let mut b = Builder::new(&mut params, &mut rng);
        let w = &cfg.maskgen.widths;
        let n = w.len();
        let enc = (0..n)
            .map(|i| {
                let ci = if i == 0 { 3 } else { w[i - 1] };
                ConvBlock::new(&mut b.pp(&format!("enc.{i}")), ci, w[i], 4, 2, 1, i > 0, Act::Relu)
            })
            .collect();
        let res = (0..cfg.maskgen.res_blocks).map(|i| ResBlock::new(&mut b.pp(&format!("res.{i}")), w[n - 1])).collect();
        let up = (0..n - 1).map(|i| UpBlock::new(&mut b.pp(&format!("up.{i}")), w[n - 1 - i], w[n - 2 - i], true, Act::Relu)).collect();
        let out = UpBlock::new(&mut b.pp("out"), w[0], 1, false, Act::Sigmoid);
        Self { params, category, enc, res, up, out }
    }

    /// `[B,3,S,S]` to a `[B,1,S,S]` map in `[0, 1]`.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let h = self.enc.iter().fold(x.clone(), |h, b| b.forward(&self.params, &h));
        let h = self.res.iter().fold(h, |h, r| r.forward(&self.params, &h));
        let h = self.up.iter().fold(h, |h, u| u.forward(&self.params, &h));
        self.out.forward(&self.params, &h)
    }
}

/// Patch discriminator over the given image stacked with a mask.
#[derive(Debug, Clone)]
pub struct MaskDiscriminator<T: Float> {
    pub params: ParamStore<T>,
    net: PatchDiscriminator,
}

impl<T: Float> MaskDiscriminator<T> {
    pub fn new(cfg: &RunConfig, category: Category) -> Self {
        let mut params = ParamStore::new();
        let mut rng = seeded_rng(cfg.seed, &format!("maskgen/discriminator/{category}"));
        let net = PatchDiscriminator::new(&mut Builder::new(&mut params, &mut rng), 4, &cfg.maskgen.disc_widths, cfg.image_size);
        Self { params, net }
    }

    pub fn forward(&self, given: &Tensor<T>, mask: &Tensor<T>) -> Tensor<T> {
        self.net.forward(&self.params, &Tensor::cat(&[given.clone(), mask.clone()], 1))
    }
}

#[derive(Debug, Clone)]
pub struct MaskGeneratorState {
    pub translators: Vec<MaskTranslator<f32>>,
    pub discriminators: Vec<MaskDiscriminator<f32>>,
    pub image_size: usize,
    pub steps: usize,
}

impl MaskGeneratorState {
    pub fn new(cfg: &RunConfig) -> Self {
        let cats = cfg.target_categories();
        Self {
            translators: cats.iter().map(|&c| MaskTranslator::new(cfg, c)).collect(),
            discriminators: cats.iter().map(|&c| MaskDiscriminator::new(cfg, c)).collect(),
            image_size: cfg.image_size,
            steps: 0,
        }
    }

    pub fn categories(&self) -> Vec<Category> {
        self.translators.iter().map(|t| t.category).collect()
    }

    /// SHA-256 over every translator's parameters.
    pub fn fingerprint(&self) -> String {
        self.translators.iter().map(|t| t.params.fingerprint()).collect::<Vec<_>>().join(":")
    }
}

impl MaskGeneratorState {
    pub fn to_checkpoint(&self, cfg: &RunConfig) -> Checkpoint {
        let mut ck = Checkpoint::new(cfg);
        for (t, d) in self.translators.iter().zip(&self.discriminators) {
            ck.add_store(&format!("maskgen/{}", t.category), &t.params);
            ck.add_store(&format!("maskgen_discriminator/{}", t.category), &d.params);
        }
        ck.meta.insert("maskgen_steps".into(), self.steps.into());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut state = Self::new(&ck.config);
        for (t, d) in state.translators.iter_mut().zip(&mut state.discriminators) {
            ck.restore(&format!("maskgen/{}", t.category), &mut t.params)?;
            ck.restore(&format!("maskgen_discriminator/{}", t.category), &mut d.params)?;
        }
        state.steps = ck.meta.get("maskgen_steps").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
        Ok(state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskgenStep {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

/// Least-squares adversarial loss plus weighted L1 to the true mask, one
/// translator per target category, on shared random train batches.
pub fn train_mask_generators(corpus: &Corpus, cfg: &RunConfig, mut progress: impl FnMut(&MaskgenStep)) -> Result<MaskGeneratorState> {
    let train = corpus.indices(Split::Train);
    if train.is_empty() {
        return Err(Error::Corpus("train split is empty".into()));
    }
    let mc = &cfg.maskgen;
    let mut state = MaskGeneratorState::new(cfg);
    let n = state.translators.len();
    let mut g_opt: Vec<Adam<f32>> = (0..n).map(|_| Adam::new(mc.lr, mc.beta1, mc.beta2)).collect();
    let mut d_opt: Vec<Adam<f32>> = (0..n).map(|_| Adam::new(mc.lr, mc.beta1, mc.beta2)).collect();
    let mut rng = seeded_rng(cfg.seed, "maskgen/batches");
    let cats = state.categories();
    for step in 1..=mc.steps {
        let picks: Vec<usize> = (0..mc.batch_size).map(|_| train[rng.random_range(0..train.len())]).collect();
        let outfits = picks.iter().map(|&i| corpus.outfit(i, &cfg.order, cfg.given_index)).collect::<Result<Vec<_>>>()?;
        let given = ItemImage::batch::<f32>(&outfits.iter().map(|o| o.given()).collect::<Vec<_>>());
        let (mut d_sum, mut g_sum) = (0.0, 0.0);
        for (t, &cat) in cats.iter().enumerate() {
            let truth = BinaryMask::batch::<f32>(&outfits.iter().map(|o| o.mask(cat).expect("category present")).collect::<Vec<_>>());
            let (tr, d) = (&state.translators[t], &state.discriminators[t]);
            let fake = tr.forward(&given);
            let d_loss = d.forward(&given, &truth).add_scalar(-1.0).sqr().mean_all().add(&d.forward(&given, &fake.detach()).sqr().mean_all());
            let d_grads = d_loss.backward();
            d_opt[t].step(&mut state.discriminators[t].params, &d_grads);

            let d = &mut state.discriminators[t];
            d.params.freeze();
            let adv = d.forward(&given, &fake).add_scalar(-1.0).sqr().mean_all();
            let g_loss = adv.add(&fake.sub(&truth).abs().mean_all().scale(mc.lambda_l1));
            d.params.unfreeze();
            let (dv, gv) = (d_loss.item() as f64, g_loss.item() as f64);
            if !dv.is_finite() || !gv.is_finite() {
                return Err(Error::Divergence(format!("mask generator for {cat} diverged at step {step}")));
            }
            let g_grads = g_loss.backward();
            g_opt[t].step(&mut state.translators[t].params, &g_grads);
            d_sum += dv;
            g_sum += gv;
        }
        state.steps = step;
        progress(&MaskgenStep { step, d_loss: d_sum / n as f64, g_loss: g_sum / n as f64 });
    }
    Ok(state)
}

/// One thresholded mask per target category.
pub fn synthesize_masks(given: &ItemImage, state: &MaskGeneratorState) -> Result<Vec<(Category, BinaryMask)>> {
    given.check()?;
    if given.size != state.image_size {
        return Err(Error::SizeMismatch(format!("given item is {} px, mask generators expect {}", given.size, state.image_size)));
    }
    let x = ItemImage::batch::<f32>(&[given]);
    state
        .translators
        .iter()
        .map(|t| {
            let p = t.forward(&x);
            let data = p.data().iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect();
            Ok((t.category, BinaryMask::new(given.size, data)?))
        })
        .collect()
}

/// Train-split outfit chosen for each category, uniformly and independently.
pub fn random_mask_sources(categories: &[Category], corpus: &Corpus, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let pool = corpus.indices(Split::Train);
    categories
        .iter()
        .map(|&cat| {
            let with_cat: Vec<usize> = pool.iter().copied().filter(|&i| corpus.records[i].entry.categories.contains(&cat)).collect();
            if with_cat.is_empty() {
                return Err(Error::Corpus(format!("no training outfit contains {cat}")));
            }
            Ok(with_cat[rng.random_range(0..with_cat.len())])
        })
        .collect()
}

pub fn random_masks(categories: &[Category], corpus: &Corpus, rng: &mut ChaCha8Rng) -> Result<Vec<(Category, BinaryMask)>> {
    let src = random_mask_sources(categories, corpus, rng)?;
    categories.iter().zip(src).map(|(&c, i)| Ok((c, corpus.records[i].mask(corpus.image_size, c)?))).collect()
}

/// Intersection over union; two empty masks count as a perfect match.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let (x, y) = (x > 0.5, y > 0.5);
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mean IoU per target category over a split, in target order.
pub fn split_iou(state: &MaskGeneratorState, corpus: &Corpus, cfg: &RunConfig, split: Split) -> Result<Vec<f64>> {
    let idx = corpus.indices(split);
    let mut sums = vec![0.0; state.translators.len()];
    for &i in &idx {
        let o = corpus.outfit(i, &cfg.order, cfg.given_index)?;
        for (t, (cat, m)) in synthesize_masks(o.given(), state)?.into_iter().enumerate() {
            sums[t] += iou(&m, o.mask(cat).expect("category present"));
        }
    }
    Ok(sums.into_iter().map(|s| s / idx.len().max(1) as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_cases() {
        let a = BinaryMask::new(2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let b = BinaryMask::new(2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(iou(&a, &a), 1.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&BinaryMask::zeros(2), &BinaryMask::zeros(2)), 1.0);
    }

    #[test]
    fn translator_outputs_are_maps() {
        let mut cfg = RunConfig::default();
        cfg.image_size = 32;
        cfg.maskgen.widths = vec![2, 3, 4];
        cfg.maskgen.res_blocks = 1;
        let state = MaskGeneratorState::new(&cfg);
        let given = ItemImage::filled(32, 0.2);
        let masks = synthesize_masks(&given, &state).unwrap();
        assert_eq!(masks.iter().map(|m| m.0).collect::<Vec<_>>(), cfg.target_categories());
        assert!(masks.iter().all(|(_, m)| m.size == 32 && m.check().is_ok()));
        let p = state.translators[0].forward(&ItemImage::batch::<f32>(&[&given]));
        assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
