//! SSIM, FID, FCTS and run reports.

use crate::ccm::Ccm;
use crate::config::{MaskStrategy, RunConfig};
use crate::data::{make_negative_outfit, oracle_compatible, Corpus, Split, RULE_VERSION};
use crate::domain::{BinaryMask, Category, ItemImage, Outfit};
use crate::error::{Error, Result};
use crate::generator::OutfitGenerator;
use crate::maskgen::{random_masks, synthesize_masks, MaskGeneratorState};
use crate::nn::seeded_rng;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

fn blur_valid(img: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|j| k[j] * img[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of two single-channel `[0, 1]` images over valid 11×11 windows.
pub fn ssim_gray(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::SizeMismatch(format!("images of {} and {} values for {h}x{w}", a.len(), b.len())));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::SizeMismatch(format!("{h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let k = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let (ma, mb) = (blur_valid(a, h, w, &k), blur_valid(b, h, w, &k));
    let (saa, sbb, sab) = (blur_valid(&prod(a, a), h, w, &k), blur_valid(&prod(b, b), h, w, &k), blur_valid(&prod(a, b), h, w, &k));
    let n = ma.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (ma[i], mb[i]);
            let (vx, vy, cxy) = (saa[i] - mx * mx, sbb[i] - my * my, sab[i] - mx * my);
            ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2)) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .sum();
    Ok(total / n as f64)
}

/// BT.601 luminance rescaled to `[0, 1]`.
pub fn luminance(img: &ItemImage) -> Vec<f64> {
    let n = img.size * img.size;
    (0..n)
        .map(|i| {
            let v = 0.299 * img.data[i] as f64 + 0.587 * img.data[n + i] as f64 + 0.114 * img.data[2 * n + i] as f64;
            (v + 1.0) / 2.0
        })
        .collect()
}

pub fn ssim(x: &ItemImage, y: &ItemImage) -> Result<f64> {
    if x.size != y.size {
        return Err(Error::SizeMismatch(format!("{} px vs {} px", x.size, y.size)));
    }
    ssim_gray(&luminance(x), &luminance(y), x.size, x.size)
}

/// Principal square root of a symmetric PSD matrix. Eigenvalues down to
/// `-1e-8` (relative to the largest magnitude when that exceeds 1) are
/// clamped to zero; anything more negative is rejected.
pub fn matrix_sqrt_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::SizeMismatch(format!("{}x{} is not square", a.nrows(), a.ncols())));
    }
    let scale = a.amax().max(1.0);
    if (a - a.transpose()).amax() > 1e-8 * scale {
        return Err(Error::OutOfRange("matrix is not symmetric".into()));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let tol = 1e-8 * scale;
    let mut roots = DVector::zeros(eig.eigenvalues.len());
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l < -tol {
            return Err(Error::OutOfRange(format!("eigenvalue {l} is negative")));
        }
        roots[i] = l.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub vectors: Vec<Vec<f64>>,
    pub source: String,
}

impl EmbeddingSet {
    pub fn new(vectors: Vec<Vec<f64>>, source: impl Into<String>) -> Result<Self> {
        let d = vectors.first().map_or(0, Vec::len);
        if vectors.len() < 2 || d == 0 {
            return Err(Error::OutOfRange(format!("need at least 2 vectors of dimension >= 1, got {} of {d}", vectors.len())));
        }
        if vectors.iter().any(|v| v.len() != d) {
            return Err(Error::LengthMismatch("embedding vectors differ in dimension".into()));
        }
        Ok(Self { vectors, source: source.into() })
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    /// Mean and unbiased covariance.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let (n, d) = (self.vectors.len(), self.dim());
        let x = DMatrix::from_fn(n, d, |i, j| self.vectors[i][j]);
        let mu = x.row_mean().transpose();
        let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mu[j]);
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        (mu, cov)
    }
}

/// `‖μ₁-μ₂‖² + Tr(Σ₁ + Σ₂ - 2(Σ₁Σ₂)^½)`, with the product root taken as
/// `(√Σ₁ Σ₂ √Σ₁)^½`.
pub fn fid(y: &EmbeddingSet, y2: &EmbeddingSet) -> Result<f64> {
    if y.dim() != y2.dim() {
        return Err(Error::LengthMismatch(format!("dimensions {} and {}", y.dim(), y2.dim())));
    }
    let (m1, s1) = y.moments();
    let (m2, s2) = y2.moments();
    let r1 = matrix_sqrt_psd(&s1)?;
    let inner = &r1 * &s2 * &r1;
    let cross = matrix_sqrt_psd(&((&inner + inner.transpose()) * 0.5))?;
    Ok((m1 - m2).norm_squared() + s1.trace() + s2.trace() - 2.0 * cross.trace())
}

/// Embeds images with the collocation classifier's item embedder.
pub fn embed_for_fid(images: &[&ItemImage], ccm: &Ccm<f32>, source: &str) -> Result<EmbeddingSet> {
    let mut vectors = Vec::with_capacity(images.len());
    for chunk in images.chunks(32) {
        let e = ccm.embed(&ItemImage::batch::<f32>(chunk))?;
        let d = e.dim(1);
        vectors.extend(e.data().chunks(d).map(|r| r.iter().map(|&v| v as f64).collect::<Vec<_>>()));
    }
    EmbeddingSet::new(vectors, source)
}

/// Fraction of pairs where the positive strictly outscores the negative.
pub fn fcts_from_scores(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.len() != neg.len() || pos.is_empty() {
        return Err(Error::LengthMismatch(format!("{} positive and {} negative scores", pos.len(), neg.len())));
    }
    Ok(pos.iter().zip(neg).filter(|(p, n)| p > n).count() as f64 / pos.len() as f64)
}

pub fn fcts(positives: &[Outfit], negatives: &[Outfit], psi: &Scorer<'_>) -> Result<f64> {
    if positives.len() != negatives.len() {
        return Err(Error::LengthMismatch(format!("{} positives and {} negatives", positives.len(), negatives.len())));
    }
    let p = positives.iter().map(|o| psi.score(o)).collect::<Result<Vec<_>>>()?;
    let n = negatives.iter().map(|o| psi.score(o)).collect::<Result<Vec<_>>>()?;
    fcts_from_scores(&p, &n)
}

/// Compatibility scorer.
pub enum Scorer<'a> {
    /// 1 when the palette rule holds, else 0.
    Oracle,
    Ccm(&'a Ccm<f32>),
}

impl Scorer<'_> {
    pub fn score(&self, o: &Outfit) -> Result<f64> {
        match self {
            Scorer::Oracle => Ok(f64::from(u8::from(oracle_compatible(o, RULE_VERSION)?))),
            Scorer::Ccm(c) => c.compatibility_score(o),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scorer::Oracle => "oracle",
            Scorer::Ccm(_) => "ccm",
        }
    }
}

/// Where reference masks come from at generation time.
pub enum MaskSource<'a> {
    /// The evaluated outfit's own masks.
    Truth,
    Pix2pix(&'a MaskGeneratorState),
    /// Draws from the train split.
    Random(&'a Corpus),
}

impl MaskSource<'_> {
    pub fn strategy(&self) -> MaskStrategy {
        match self {
            MaskSource::Truth => MaskStrategy::User,
            MaskSource::Pix2pix(_) => MaskStrategy::Pix2pix,
            MaskSource::Random(_) => MaskStrategy::Random,
        }
    }

    pub fn masks(&self, o: &Outfit, targets: &[Category], rng: &mut rand_chacha::ChaCha8Rng) -> Result<Vec<(Category, BinaryMask)>> {
        match self {
            MaskSource::Truth => targets
                .iter()
                .map(|&c| o.mask(c).cloned().map(|m| (c, m)).ok_or_else(|| Error::InvalidOutfit(format!("outfit lacks {c}"))))
                .collect(),
            MaskSource::Pix2pix(state) => synthesize_masks(o.given(), state),
            MaskSource::Random(corpus) => random_masks(targets, corpus, rng),
        }
    }
}

/// Completes every outfit of `split` around its given item.
pub fn generate_split(
    generator: &OutfitGenerator<f32>,
    corpus: &Corpus,
    split: Split,
    masks: &MaskSource<'_>,
    cfg: &RunConfig,
) -> Result<(Vec<Outfit>, Vec<Outfit>)> {
    let real = corpus.outfits(split, &cfg.order, cfg.given_index)?;
    let targets = generator.targets();
    let mut rng = seeded_rng(cfg.seed, "eval/masks");
    let synth = real
        .iter()
        .map(|o| {
            let m = masks.masks(o, &targets, &mut rng)?;
            Ok(generator.generate(o.given(), &m)?.0)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((real, synth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Absent unless masks come from the evaluated outfits themselves.
    pub ssim: Option<BTreeMap<Category, f64>>,
    pub fid: BTreeMap<Category, f64>,
    pub fcts: f64,
    pub n_cmp: usize,
    pub scorer: String,
    pub mask_strategy: MaskStrategy,
    pub seed: u64,
    pub config_hash: String,
    pub split: Split,
    pub lpips: Option<f64>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// `metric,category,value` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,category,value\n");
        for (c, v) in self.ssim.iter().flatten() {
            writeln!(s, "ssim,{c},{v}").expect("write to string");
        }
        for (c, v) in &self.fid {
            writeln!(s, "fid,{c},{v}").expect("write to string");
        }
        writeln!(s, "fcts,,{}", self.fcts).expect("write to string");
        writeln!(s, "n_cmp,,{}", self.n_cmp).expect("write to string");
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.json"), self.to_json())?;
        std::fs::write(dir.join("metrics.csv"), self.to_csv())?;
        Ok(())
    }
}

/// Per-category SSIM of synthesized against real items.
pub fn ssim_by_category(real: &[Outfit], synth: &[Outfit], targets: &[Category]) -> Result<BTreeMap<Category, f64>> {
    targets
        .iter()
        .map(|&c| {
            let mut sum = 0.0;
            for (r, s) in real.iter().zip(synth) {
                sum += ssim(r.item(c).expect("category present"), s.item(c).expect("category present"))?;
            }
            Ok((c, sum / real.len().max(1) as f64))
        })
        .collect()
}

/// Negatives recombined from the synthesized pool, one per positive.
pub fn negatives_for(synth: &[Outfit], seed: u64) -> Result<Vec<Outfit>> {
    let mut rng = seeded_rng(seed, "eval/negatives");
    (0..synth.len()).map(|_| make_negative_outfit(synth, &mut rng).map(|(o, _)| o)).collect()
}

pub fn evaluate_run(
    generator: &OutfitGenerator<f32>,
    corpus: &Corpus,
    split: Split,
    masks: &MaskSource<'_>,
    psi: &Scorer<'_>,
    fid_extractor: &Ccm<f32>,
    cfg: &RunConfig,
) -> Result<MetricReport> {
    let (real, synth) = generate_split(generator, corpus, split, masks, cfg)?;
    let targets = generator.targets();
    let ssim = match masks {
        MaskSource::Truth => Some(ssim_by_category(&real, &synth, &targets)?),
        _ => None,
    };
    let mut fid_map = BTreeMap::new();
    for &c in &targets {
        let r: Vec<&ItemImage> = real.iter().map(|o| o.item(c).expect("category present")).collect();
        let s: Vec<&ItemImage> = synth.iter().map(|o| o.item(c).expect("category present")).collect();
        fid_map.insert(c, fid(&embed_for_fid(&r, fid_extractor, "real")?, &embed_for_fid(&s, fid_extractor, "synthesized")?)?);
    }
    let negatives = negatives_for(&synth, cfg.seed)?;
    let fcts = fcts(&synth, &negatives, psi)?;
    Ok(MetricReport {
        ssim,
        fid: fid_map,
        fcts,
        n_cmp: synth.len(),
        scorer: psi.name().into(),
        mask_strategy: masks.strategy(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        split,
        lpips: None,
    })
}
