//! Semantic alignment: branch extractors, cosine correspondence between the
//! given item and the reference mask, and softmax alignment of encoder
//! features.

use crate::config::{SamConfig, SamItemInput};
use crate::data::io::write_gray8;
use crate::error::{Error, Result};
use crate::nn::{Act, Builder, ConvBlock, ParamStore};
use crate::tensor::{Float, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Added to each norm in the cosine.
pub const NORM_EPS: f64 = 1e-8;

/// Source positions reported per explained region.
pub const DEFAULT_TOP_K: usize = 4;

/// Four-block feature extractor. The image and mask branches use stride-2
/// blocks; the encoder-feature variant keeps the grid with stride 1.
#[derive(Debug, Clone)]
pub struct SamBranch {
    blocks: Vec<ConvBlock>,
}

impl SamBranch {
    pub fn strided<T: Float>(b: &mut Builder<'_, T>, c_in: usize, c: usize) -> Self {
        let blocks = (0..4)
            .map(|i| {
                let ci = if i == 0 { c_in } else { c };
                ConvBlock::new(&mut b.pp(&i.to_string()), ci, c, 4, 2, 1, i == 1 || i == 2, Act::Relu)
            })
            .collect();
        Self { blocks }
    }

    pub fn same_grid<T: Float>(b: &mut Builder<'_, T>, c_in: usize, c: usize) -> Self {
        let blocks = (0..4)
            .map(|i| {
                let ci = if i == 0 { c_in } else { c };
                ConvBlock::new(&mut b.pp(&i.to_string()), ci, c, 3, 1, 1, false, Act::Relu)
            })
            .collect();
        Self { blocks }
    }

    /// `[B, C_in, H, W]` to `[B, c, h, w]`.
    pub fn forward<T: Float>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Tensor<T> {
        self.blocks.iter().fold(x.clone(), |h, blk| blk.forward(ps, &h))
    }
}

/// `[B, C, h, w]` to `[B, h·w, C]`.
fn positions<T: Float>(f: &Tensor<T>) -> Tensor<T> {
    let (b, c, h, w) = (f.dim(0), f.dim(1), f.dim(2), f.dim(3));
    f.reshape(&[b, c, h * w]).permute(&[0, 2, 1])
}

/// `M[b, u, v] = cos(Fx[b, :, u], Fy[b, :, v])` with `ε` added to each norm.
pub fn correspondence<T: Float>(fx: &Tensor<T>, fy: &Tensor<T>) -> Result<Tensor<T>> {
    if fx.shape() != fy.shape() || fx.rank() != 4 {
        return Err(Error::SizeMismatch(format!("feature maps {:?} and {:?}", fx.shape(), fy.shape())));
    }
    let x = positions(fx).normalize_last(NORM_EPS);
    let y = positions(fy).normalize_last(NORM_EPS);
    Ok(x.matmul_t(&y))
}

/// Row-softmax of `M` over source positions.
pub fn alignment_weights<T: Float>(m: &Tensor<T>) -> Tensor<T> {
    m.softmax_last()
}

/// `F_alg(u) = Σ_v softmax_v(M(u, v)) · F_src(v)`. With `literal`, sums
/// `F_src(u)` instead, which equals `F_src` up to rounding.
pub fn align<T: Float>(f_src: &Tensor<T>, m: &Tensor<T>, literal: bool) -> Result<Tensor<T>> {
    let (b, c, h, w) = (f_src.dim(0), f_src.dim(1), f_src.dim(2), f_src.dim(3));
    let hw = h * w;
    if m.shape() != [b, hw, hw] {
        return Err(Error::SizeMismatch(format!("correspondence {:?} for source grid {h}x{w}", m.shape())));
    }
    let weights = alignment_weights(m);
    let src = positions(f_src);
    let out = if literal { src.mul(&weights.sum_axis(2)) } else { weights.matmul(&src) };
    Ok(out.permute(&[0, 2, 1]).reshape(&[b, c, h, w]))
}

/// Average-pools a `[B, 1, S, S]` mask down to side `side`.
pub fn pool_to<T: Float>(x: &Tensor<T>, side: usize) -> Tensor<T> {
    let mut x = x.clone();
    while x.dim(2) > side {
        x = x.avg_pool2();
    }
    x
}

#[derive(Debug, Clone)]
pub struct SamOutput<T: Float> {
    pub aligned: Tensor<T>,
    /// Absent in the zero-channel ablation.
    pub correspondence: Option<Tensor<T>>,
}

/// Alignment module of one item generator.
#[derive(Debug, Clone)]
pub struct Sam {
    item_branch: Option<SamBranch>,
    mask_branch: Option<SamBranch>,
    bypass: Option<ConvBlock>,
    pub cfg: SamConfig,
}

impl Sam {
    /// `enc_channels` is the width of `F_src`.
    pub fn new<T: Float>(b: &mut Builder<'_, T>, cfg: &SamConfig, enc_channels: usize) -> Self {
        let c = cfg.channels;
        if c == 0 {
            let bypass = ConvBlock::new(&mut b.pp("bypass"), enc_channels + 1, enc_channels, 1, 1, 0, false, Act::None);
            return Self { item_branch: None, mask_branch: None, bypass: Some(bypass), cfg: cfg.clone() };
        }
        let item = match cfg.item_input {
            SamItemInput::Image => SamBranch::strided(&mut b.pp("item"), 3, c),
            SamItemInput::Encoder => SamBranch::same_grid(&mut b.pp("item"), enc_channels, c),
        };
        let mask = SamBranch::strided(&mut b.pp("mask"), 1, c);
        Self { item_branch: Some(item), mask_branch: Some(mask), bypass: None, cfg: cfg.clone() }
    }

    /// Item-branch features `Fx`.
    pub fn item_features<T: Float>(&self, ps: &ParamStore<T>, given: &Tensor<T>, f_src: &Tensor<T>) -> Option<Tensor<T>> {
        let branch = self.item_branch.as_ref()?;
        Some(match self.cfg.item_input {
            SamItemInput::Image => branch.forward(ps, given),
            SamItemInput::Encoder => branch.forward(ps, f_src),
        })
    }

    /// Mask-branch features `Fy`; the mask enters as `2m - 1`.
    pub fn mask_features<T: Float>(&self, ps: &ParamStore<T>, mask: &Tensor<T>) -> Option<Tensor<T>> {
        Some(self.mask_branch.as_ref()?.forward(ps, &mask.scale(2.0).add_scalar(-1.0)))
    }

    /// `given: [B,3,S,S]`, `mask: [B,1,S,S]`, `f_src: [B,C,h,w]`.
    pub fn forward<T: Float>(&self, ps: &ParamStore<T>, given: &Tensor<T>, mask: &Tensor<T>, f_src: &Tensor<T>) -> Result<SamOutput<T>> {
        if let Some(bypass) = &self.bypass {
            let pooled = pool_to(mask, f_src.dim(2));
            let aligned = bypass.forward(ps, &Tensor::cat(&[f_src.clone(), pooled], 1));
            return Ok(SamOutput { aligned, correspondence: None });
        }
        let fx = self.item_features(ps, given, f_src).expect("branch present");
        let fy = self.mask_features(ps, mask).expect("branch present");
        if fx.dim(2) != f_src.dim(2) || fx.dim(3) != f_src.dim(3) {
            return Err(Error::SizeMismatch(format!("branch grid {:?} vs encoder grid {:?}", fx.shape(), f_src.shape())));
        }
        let m = correspondence(&fx, &fy)?;
        let aligned = align(f_src, &m, self.cfg.literal_alignment)?;
        Ok(SamOutput { aligned, correspondence: Some(m) })
    }
}

/// A correspondence matrix of one sample, `(h·w)×(h·w)`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceMatrix {
    pub h: usize,
    pub w: usize,
    pub values: Vec<f64>,
}

impl CorrespondenceMatrix {
    pub fn from_tensor<T: Float>(m: &Tensor<T>, b: usize, h: usize, w: usize) -> Self {
        let n = h * w;
        let values = m.data()[b * n * n..(b + 1) * n * n].iter().map(|v| v.as_f64()).collect();
        Self { h, w, values }
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.values[u * self.h * self.w + v]
    }
}

/// Source positions `(row, col, score)` ranked by correspondence averaged
/// over the output positions in `region`.
pub fn explanation_map(m: &CorrespondenceMatrix, region: &[(usize, usize)], top_k: usize) -> Result<Vec<(usize, usize, f64)>> {
    if region.is_empty() {
        return Err(Error::InvalidOutfit("explanation region is empty".into()));
    }
    if top_k == 0 {
        return Err(Error::InvalidOutfit("top_k must be at least 1".into()));
    }
    let n = m.h * m.w;
    if let Some(&(r, c)) = region.iter().find(|&&(r, c)| r >= m.h || c >= m.w) {
        return Err(Error::OutOfRange(format!("region position ({r}, {c}) outside {}x{}", m.h, m.w)));
    }
    let mut scores: Vec<(usize, f64)> =
        (0..n).map(|v| (v, region.iter().map(|&(r, c)| m.at(r * m.w + c, v)).sum::<f64>() / region.len() as f64)).collect();
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scores.into_iter().take(top_k).map(|(v, s)| (v / m.w, v % m.w, s)).collect())
}

/// Column means of `M` as an `h×w` grid.
pub fn mean_correspondence(m: &CorrespondenceMatrix) -> Vec<f64> {
    let n = m.h * m.w;
    (0..n).map(|v| (0..n).map(|u| m.at(u, v)).sum::<f64>() / n as f64).collect()
}

/// Writes `{ "r,c": [[row, col, score], ...] }` for each region given as a
/// single output position.
pub fn export_explanation_json(path: &Path, m: &CorrespondenceMatrix, regions: &[Vec<(usize, usize)>], top_k: usize) -> Result<()> {
    let mut out = BTreeMap::new();
    for region in regions {
        let key = region.iter().map(|(r, c)| format!("{r},{c}")).collect::<Vec<_>>().join(";");
        out.insert(key, explanation_map(m, region, top_k)?);
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(&out)?)?;
    Ok(())
}

/// Min-max normalized grayscale heat map, each cell drawn as `cell×cell`.
pub fn export_heat_png(path: &Path, heat: &[f64], h: usize, w: usize, cell: usize) -> Result<()> {
    let (lo, hi) = heat.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut px = vec![0u8; h * cell * w * cell];
    for y in 0..h * cell {
        for x in 0..w * cell {
            px[y * w * cell + x] = (255.0 * (heat[(y / cell) * w + x / cell] - lo) / span).round() as u8;
        }
    }
    write_gray8(path, w * cell, h * cell, &px)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        let a = Tensor::<f64>::from_f64(&[1.0, 0.0], &[1, 2, 1, 1]);
        let b = Tensor::<f64>::from_f64(&[0.0, 1.0], &[1, 2, 1, 1]);
        assert!((correspondence(&a, &a).unwrap().item() - 1.0).abs() < 1e-7);
        assert_eq!(correspondence(&a, &b).unwrap().item(), 0.0);
    }

    #[test]
    fn align_hand_example() {
        // Row u=0 of M is [ln 2, 0]; sources v1=[3,0], v2=[0,3].
        let src = Tensor::<f64>::from_f64(&[3.0, 0.0, 0.0, 3.0], &[1, 2, 1, 2]);
        let m = Tensor::<f64>::from_f64(&[2f64.ln(), 0.0, 0.0, 0.0], &[1, 2, 2]);
        let out = align(&src, &m, false).unwrap().to_vec();
        assert!((out[0] - 2.0).abs() < 1e-12 && (out[2] - 1.0).abs() < 1e-12, "{out:?}");
    }

    #[test]
    fn literal_form_returns_source() {
        let src = Tensor::<f64>::from_f64(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0], &[1, 2, 2, 2]);
        let m = Tensor::<f64>::from_f64(&(0..16).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>(), &[1, 4, 4]);
        let out = align(&src, &m, true).unwrap();
        for (a, b) in out.to_vec().iter().zip(src.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn explanation_cases() {
        let mut values = vec![0.1; 16];
        for u in 0..4 {
            values[u * 4 + 2] = 0.9;
        }
        let m = CorrespondenceMatrix { h: 2, w: 2, values };
        let top = explanation_map(&m, &[(0, 1)], 4).unwrap();
        assert_eq!((top[0].0, top[0].1), (1, 0));
        assert_eq!(top.len(), 4);
        assert!(explanation_map(&m, &[], 1).is_err());
        let flat = CorrespondenceMatrix { h: 2, w: 2, values: vec![0.3; 16] };
        assert!(mean_correspondence(&flat).iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }
}
