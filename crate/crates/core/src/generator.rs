//! Item generators (encoder, alignment, decoder) and the outfit generator
//! that owns one per target category.

use crate::config::RunConfig;
use crate::domain::{validate_outfit, BinaryMask, Category, ItemImage, Outfit};
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Act, Builder, ConvBlock, ParamStore, ResBlock, UpBlock};
use crate::sam::{CorrespondenceMatrix, Sam};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone)]
pub struct ItemGenerator<T: Float> {
    pub params: ParamStore<T>,
    pub category: Category,
    enc: Vec<ConvBlock>,
    enc_res: Vec<ResBlock>,
    sam: Sam,
    dec_res: Vec<ResBlock>,
    up: Vec<UpBlock>,
    out: UpBlock,
    image_size: usize,
}

impl<T: Float> ItemGenerator<T> {
    pub fn new(cfg: &RunConfig, category: Category) -> Self {
        let mut params = ParamStore::new();
        let mut rng = seeded_rng(cfg.seed, &format!("generator/{category}"));
        let mut b = Builder::new(&mut params, &mut rng);
        let w = &cfg.generator.widths;
        let enc = (0..4)
            .map(|i| {
                let ci = if i == 0 { 3 } else { w[i - 1] };
                ConvBlock::new(&mut b.pp(&format!("enc.{i}")), ci, w[i], 4, 2, 1, true, Act::Relu)
            })
            .collect();
        let enc_res = (0..cfg.generator.res_blocks).map(|i| ResBlock::new(&mut b.pp(&format!("enc_res.{i}")), w[3])).collect();
        let sam = Sam::new(&mut b.pp("sam"), &cfg.sam, w[3]);
        let dec_res = (0..cfg.generator.res_blocks).map(|i| ResBlock::new(&mut b.pp(&format!("dec_res.{i}")), w[3])).collect();
        let up = (0..3).map(|i| UpBlock::new(&mut b.pp(&format!("up.{i}")), w[3 - i], w[2 - i], true, Act::Relu)).collect();
        let out = UpBlock::new(&mut b.pp("out"), w[0], 3, false, Act::Tanh);
        Self { params, category, enc, enc_res, sam, dec_res, up, out, image_size: cfg.image_size }
    }

    fn check_side(&self, x: &Tensor<T>, channels: usize) -> Result<()> {
        if x.rank() != 4 || x.dim(1) != channels || x.dim(2) != self.image_size || x.dim(3) != self.image_size {
            return Err(Error::SizeMismatch(format!("expected [B, {channels}, {s}, {s}], got {:?}", x.shape(), s = self.image_size)));
        }
        Ok(())
    }

    /// `[B,3,S,S]` to `[B,C,S/16,S/16]`.
    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_side(x, 3)?;
        let h = self.enc.iter().fold(x.clone(), |h, b| b.forward(&self.params, &h));
        Ok(self.enc_res.iter().fold(h, |h, r| r.forward(&self.params, &h)))
    }

    /// Encoder-scale features back to a `[B,3,S,S]` image in `[-1, 1]`.
    pub fn decode(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        let side = self.image_size / 16;
        if f.rank() != 4 || f.dim(2) != side || f.dim(3) != side {
            return Err(Error::SizeMismatch(format!("decoder expects a {side}x{side} grid, got {:?}", f.shape())));
        }
        let h = self.dec_res.iter().fold(f.clone(), |h, r| r.forward(&self.params, &h));
        let h = self.up.iter().fold(h, |h, u| u.forward(&self.params, &h));
        Ok(self.out.forward(&self.params, &h))
    }

    /// Synthesized item and, unless the alignment is bypassed, the
    /// correspondence `[B, hw, hw]`.
    pub fn forward(&self, given: &Tensor<T>, mask: &Tensor<T>) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        self.check_side(mask, 1)?;
        let f_src = self.encode(given)?;
        let s = self.sam.forward(&self.params, given, mask, &f_src)?;
        Ok((self.decode(&s.aligned)?, s.correspondence))
    }

    pub fn cast<U: Float>(&self) -> ItemGenerator<U> {
        ItemGenerator {
            params: self.params.cast(),
            category: self.category,
            enc: self.enc.clone(),
            enc_res: self.enc_res.clone(),
            sam: self.sam.clone(),
            dec_res: self.dec_res.clone(),
            up: self.up.clone(),
            out: self.out.clone(),
            image_size: self.image_size,
        }
    }
}

/// One item generator per non-given category, in configured order.
#[derive(Debug, Clone)]
pub struct OutfitGenerator<T: Float> {
    pub generators: Vec<ItemGenerator<T>>,
    pub order: Vec<Category>,
    pub given_index: usize,
}

impl<T: Float> OutfitGenerator<T> {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            generators: cfg.target_categories().into_iter().map(|c| ItemGenerator::new(cfg, c)).collect(),
            order: cfg.order.clone(),
            given_index: cfg.given_index,
        }
    }

    pub fn targets(&self) -> Vec<Category> {
        self.generators.iter().map(|g| g.category).collect()
    }

    pub fn generator(&self, cat: Category) -> Option<&ItemGenerator<T>> {
        self.generators.iter().find(|g| g.category == cat)
    }

    /// Runs every item generator on a batch; `masks[i]` pairs with target `i`.
    pub fn forward(&self, given: &Tensor<T>, masks: &[Tensor<T>]) -> Result<Vec<(Tensor<T>, Option<Tensor<T>>)>> {
        if masks.len() != self.generators.len() {
            return Err(Error::LengthMismatch(format!("{} reference masks for {} target items", masks.len(), self.generators.len())));
        }
        self.generators.iter().zip(masks).map(|(g, m)| g.forward(given, m)).collect()
    }

    /// Completes an outfit around `given`. Masks are labelled and must follow
    /// the target order.
    pub fn generate(&self, given: &ItemImage, masks: &[(Category, BinaryMask)]) -> Result<(Outfit, Vec<Option<CorrespondenceMatrix>>)> {
        let targets = self.targets();
        if masks.len() != targets.len() {
            return Err(Error::LengthMismatch(format!("{} reference masks for {} target items", masks.len(), targets.len())));
        }
        if let Some(((c, _), t)) = masks.iter().zip(&targets).find(|((c, _), t)| c != *t) {
            return Err(Error::InvalidOutfit(format!("mask for {c} supplied where {t} is expected")));
        }
        given.check()?;
        let g = ItemImage::batch::<T>(&[given]);
        let mut items = Vec::new();
        let mut out_masks = Vec::new();
        let mut corr = Vec::new();
        let mut t = 0;
        for (i, &cat) in self.order.iter().enumerate() {
            if i == self.given_index {
                items.push(given.clone());
                out_masks.push(crate::data::derive_mask(given, 0.05));
                continue;
            }
            let mask = &masks[t].1;
            mask.check()?;
            let (img, m) = self.generators[t].forward(&g, &BinaryMask::batch::<T>(&[mask]))?;
            debug_assert_eq!(self.generators[t].category, cat);
            items.push(ItemImage::from_tensor(&img, 0));
            out_masks.push(mask.clone());
            let side = given.size / 16;
            corr.push(m.map(|m| CorrespondenceMatrix::from_tensor(&m, 0, side, side)));
            t += 1;
        }
        let outfit = validate_outfit(Outfit { items, masks: out_masks, categories: self.order.clone(), given_index: self.given_index })?;
        Ok((outfit, corr))
    }
}
