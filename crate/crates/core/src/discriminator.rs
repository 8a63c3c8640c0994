//! Multi-scale patch discriminators and least-squares adversarial losses.

use crate::config::RunConfig;
use crate::domain::Category;
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Act, Builder, ConvBlock, Conv2d, ParamStore};
use crate::tensor::{Float, Tensor};

pub const SCALES: usize = 3;
const SLOPE: f64 = 0.2;

/// Up to four stride-2 convolutions (fewer when the input is too small to
/// survive four halvings), then a 1×1 convolution to one channel.
#[derive(Debug, Clone)]
pub struct PatchDiscriminator {
    blocks: Vec<ConvBlock>,
    head: Conv2d,
}

impl PatchDiscriminator {
    pub fn new<T: Float>(b: &mut Builder<'_, T>, c_in: usize, widths: &[usize], input_side: usize) -> Self {
        let n = widths.len().min(input_side.trailing_zeros() as usize).max(1);
        let blocks: Vec<ConvBlock> = (0..n)
            .map(|i| {
                let ci = if i == 0 { c_in } else { widths[i - 1] };
                ConvBlock::new(&mut b.pp(&i.to_string()), ci, widths[i], 4, 2, 1, false, Act::LeakyRelu(SLOPE))
            })
            .collect();
        let head = Conv2d::new(&mut b.pp("head"), widths[n - 1], 1, 1, 1, 0);
        Self { blocks, head }
    }

    /// `[B, C, H, W]` to a patch map `[B, 1, h, w]`.
    pub fn forward<T: Float>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Tensor<T> {
        let h = self.blocks.iter().fold(x.clone(), |h, b| b.forward(ps, &h));
        self.head.forward(ps, &h)
    }
}

/// Average-pool by `2^s`, `s ∈ {0, 1, 2}`.
pub fn downsample<T: Float>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    if s >= SCALES {
        return Err(Error::OutOfRange(format!("scale {s} not in 0..{SCALES}")));
    }
    Ok((0..s).fold(x.clone(), |h, _| h.avg_pool2()))
}

#[derive(Debug, Clone)]
pub struct MultiScaleDiscriminator<T: Float> {
    pub params: ParamStore<T>,
    pub category: Category,
    scales: Vec<PatchDiscriminator>,
}

impl<T: Float> MultiScaleDiscriminator<T> {
    pub fn new(cfg: &RunConfig, category: Category) -> Self {
        let mut params = ParamStore::new();
        let mut rng = seeded_rng(cfg.seed, &format!("discriminator/{category}"));
        let mut b = Builder::new(&mut params, &mut rng);
        let scales = (0..SCALES)
            .map(|s| PatchDiscriminator::new(&mut b.pp(&format!("scale{s}")), 3, &cfg.discriminator.widths, cfg.image_size >> s))
            .collect();
        Self { params, category, scales }
    }

    /// Patch maps `D_s(∇(x, s))` for every scale.
    pub fn outputs(&self, x: &Tensor<T>) -> Vec<Tensor<T>> {
        self.scales
            .iter()
            .enumerate()
            .map(|(s, d)| d.forward(&self.params, &downsample(x, s).expect("scale in range")))
            .collect()
    }

    pub fn cast<U: Float>(&self) -> MultiScaleDiscriminator<U> {
        MultiScaleDiscriminator { params: self.params.cast(), category: self.category, scales: self.scales.clone() }
    }
}

/// `Σ_s mean((D_s(real) - 1)²) + mean(D_s(fake)²)`.
pub fn d_loss_from_outputs<T: Float>(real: &[Tensor<T>], fake: &[Tensor<T>]) -> Tensor<T> {
    real.iter()
        .zip(fake)
        .map(|(r, f)| r.add_scalar(-1.0).sqr().mean_all().add(&f.sqr().mean_all()))
        .reduce(|a, b| a.add(&b))
        .expect("at least one scale")
}

/// `Σ_s mean((D_s(fake) - 1)²)`.
pub fn g_adv_from_outputs<T: Float>(fake: &[Tensor<T>]) -> Tensor<T> {
    fake.iter().map(|f| f.add_scalar(-1.0).sqr().mean_all()).reduce(|a, b| a.add(&b)).expect("at least one scale")
}

/// Discriminator objective; `fake` is detached so nothing reaches the generator.
pub fn d_loss<T: Float>(d: &MultiScaleDiscriminator<T>, real: &Tensor<T>, fake: &Tensor<T>) -> Tensor<T> {
    d_loss_from_outputs(&d.outputs(real), &d.outputs(&fake.detach()))
}

/// Generator-side adversarial loss; freeze `d` first to keep its gradients out.
pub fn g_adv_loss<T: Float>(d: &MultiScaleDiscriminator<T>, fake: &Tensor<T>) -> Tensor<T> {
    g_adv_from_outputs(&d.outputs(fake))
}
