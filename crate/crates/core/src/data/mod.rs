//! Synthetic outfit corpus. Every outfit is textured from one style token,
//! and the compatibility rule is "all items share the token's palette".

mod corpus;
pub mod io;
mod oracle;
mod render;

pub use corpus::{Corpus, CorpusEntry, Record};
pub use oracle::{dominant_palette, oracle_compatible, palettes_match, Oracle, RULE_VERSION};
pub use render::{render_item, render_outfit};

use crate::domain::{BinaryMask, Category, ItemImage, Outfit};
use crate::error::{Error, Result};
use crate::nn::seeded_rng;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Per-channel levels palette colours are drawn from.
pub const LEVELS: [u8; 4] = [0, 80, 160, 240];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Stripes,
    Dots,
    Solid,
    Checker,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StyleToken {
    pub palette: Vec<[u8; 3]>,
    pub pattern: Pattern,
    pub pattern_scale: u32,
}

impl StyleToken {
    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.palette.len()) {
            return Err(Error::Corpus(format!("palette needs 2-3 colours, has {}", self.palette.len())));
        }
        for (i, a) in self.palette.iter().enumerate() {
            for b in &self.palette[..i] {
                let d = a.iter().zip(b).map(|(x, y)| x.abs_diff(*y)).max().unwrap_or(0);
                if d < 60 {
                    return Err(Error::Corpus(format!("palette colours {a:?} and {b:?} are too close")));
                }
            }
            if a.iter().all(|&c| c >= 240) {
                return Err(Error::Corpus(format!("palette colour {a:?} is indistinguishable from background")));
            }
        }
        if !(3..=5).contains(&self.pattern_scale) {
            return Err(Error::Corpus(format!("pattern scale {} outside 3..=5", self.pattern_scale)));
        }
        Ok(())
    }

    /// Palette as a canonical sorted set.
    pub fn palette_key(&self) -> Vec<[u8; 3]> {
        let mut p = self.palette.clone();
        p.sort();
        p
    }
}

/// All grid colours except the near-white corner.
pub fn palette_colors() -> Vec<[u8; 3]> {
    let mut out = Vec::new();
    for r in LEVELS {
        for g in LEVELS {
            for b in LEVELS {
                if !(r >= 240 && g >= 240 && b >= 240) {
                    out.push([r, g, b]);
                }
            }
        }
    }
    out
}

pub fn random_token(rng: &mut ChaCha8Rng) -> StyleToken {
    let colors = palette_colors();
    let k = rng.random_range(2..=3);
    let palette = sample(rng, colors.len(), k).into_iter().map(|i| colors[i]).collect();
    let pattern = [Pattern::Stripes, Pattern::Dots, Pattern::Solid, Pattern::Checker][rng.random_range(0..4)];
    StyleToken { palette, pattern, pattern_scale: rng.random_range(3..=5) }
}

/// Default-order outfit for `token`, deterministic in `seed`.
pub fn render_outfit_seeded(token: &StyleToken, seed: u64, size: usize) -> Outfit {
    let mut rng = seeded_rng(seed, "render");
    render_outfit(token, &Category::ALL, 0, size, &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A pixel is foreground iff some channel is more than `tol` below white.
pub fn derive_mask(img: &ItemImage, tol: f64) -> BinaryMask {
    let plane = img.size * img.size;
    let data = (0..plane)
        .map(|p| {
            let fg = (0..3).any(|c| 1.0 - img.data[c * plane + p] as f64 > tol);
            if fg {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    BinaryMask { size: img.size, data }
}

/// Outfit whose items come from `N` distinct pool outfits; returns the
/// source indices alongside it.
pub fn make_negative_outfit(pool: &[Outfit], rng: &mut ChaCha8Rng) -> Result<(Outfit, Vec<usize>)> {
    let first = pool.first().ok_or_else(|| Error::Corpus("empty pool".into()))?;
    let n = first.len();
    if pool.len() < n {
        return Err(Error::Corpus(format!("need at least {n} outfits for a negative, have {}", pool.len())));
    }
    let sources: Vec<usize> = sample(rng, pool.len(), n).into_vec();
    let mut out = Outfit { items: Vec::new(), masks: Vec::new(), categories: first.categories.clone(), given_index: first.given_index };
    for (i, &s) in sources.iter().enumerate() {
        if pool[s].categories != first.categories {
            return Err(Error::Corpus("pool outfits disagree on category order".into()));
        }
        out.items.push(pool[s].items[i].clone());
        out.masks.push(pool[s].masks[i].clone());
    }
    Ok((out, sources))
}

fn bilinear(src: &[f32], side: usize, ox: usize, oy: usize, win: usize, size: usize) -> Vec<f32> {
    let scale = win as f64 / size as f64;
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        let fy = ((y as f64 + 0.5) * scale - 0.5).clamp(0.0, (win - 1) as f64);
        let (y0, ty) = (fy.floor() as usize, fy - fy.floor());
        let y1 = (y0 + 1).min(win - 1);
        for x in 0..size {
            let fx = ((x as f64 + 0.5) * scale - 0.5).clamp(0.0, (win - 1) as f64);
            let (x0, tx) = (fx.floor() as usize, fx - fx.floor());
            let x1 = (x0 + 1).min(win - 1);
            let at = |yy: usize, xx: usize| src[(oy + yy) * side + ox + xx] as f64;
            let v = (1.0 - ty) * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x1)) + ty * ((1.0 - tx) * at(y1, x0) + tx * at(y1, x1));
            out[y * size + x] = v as f32;
        }
    }
    out
}

/// Crops every item and mask with one shared window of side
/// `size - floor(margin * size)` and resizes back bilinearly. Masks are
/// re-binarized at 0.5.
pub fn random_crop_augment(o: &Outfit, margin: f64, rng: &mut ChaCha8Rng) -> Outfit {
    let size = o.items[0].size;
    let m = (margin * size as f64).floor() as usize;
    if m == 0 {
        return o.clone();
    }
    let (ox, oy) = (rng.random_range(0..=m), rng.random_range(0..=m));
    let win = size - m;
    let plane = size * size;
    let items = o
        .items
        .iter()
        .map(|img| {
            let mut data = Vec::with_capacity(3 * plane);
            for c in 0..3 {
                data.extend(bilinear(&img.data[c * plane..(c + 1) * plane], size, ox, oy, win, size).into_iter().map(|v| v.clamp(-1.0, 1.0)));
            }
            ItemImage { size, data }
        })
        .collect();
    let masks = o
        .masks
        .iter()
        .map(|mk| {
            let data = bilinear(&mk.data, size, ox, oy, win, size).into_iter().map(|v| if v >= 0.5 { 1.0 } else { 0.0 }).collect();
            BinaryMask { size, data }
        })
        .collect();
    Outfit { items, masks, categories: o.categories.clone(), given_index: o.given_index }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_outfit;
    use proptest::prelude::*;

    fn token(seed: u64) -> StyleToken {
        random_token(&mut seeded_rng(seed, "token"))
    }

    #[test]
    fn render_is_deterministic() {
        let t = token(1);
        assert_eq!(render_outfit_seeded(&t, 5, 64), render_outfit_seeded(&t, 5, 64));
        assert_ne!(render_outfit_seeded(&t, 5, 64), render_outfit_seeded(&t, 6, 64));
    }

    #[test]
    fn derive_mask_cases() {
        let white = ItemImage::filled(4, 1.0);
        assert_eq!(derive_mask(&white, 0.05).area(), 0);
        let mut dot = white.clone();
        for c in 0..3 {
            dot.data[c * 16 + 6] = -1.0;
        }
        let m = derive_mask(&dot, 0.05);
        assert_eq!(m.area(), 1);
        assert!(m.at(1, 2));
    }

    #[test]
    fn zero_margin_crop_is_identity() {
        let o = render_outfit_seeded(&token(2), 1, 32);
        assert_eq!(random_crop_augment(&o, 0.0, &mut seeded_rng(0, "crop")), o);
    }

    #[test]
    fn negative_draws_distinct_sources() {
        let pool: Vec<Outfit> = (0..6).map(|i| render_outfit_seeded(&token(i), i, 32)).collect();
        let (neg, src) = make_negative_outfit(&pool, &mut seeded_rng(3, "neg")).unwrap();
        let mut s = src.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 4);
        assert_eq!(neg.categories, pool[0].categories);
        let again = make_negative_outfit(&pool, &mut seeded_rng(3, "neg")).unwrap();
        assert_eq!(again.1, src);
        assert!(make_negative_outfit(&pool[..3], &mut seeded_rng(3, "neg")).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn rendered_masks_equal_derived_masks(seed in 0u64..10_000, size in prop::sample::select(vec![32usize, 64])) {
            let t = token(seed);
            t.validate().unwrap();
            let o = render_outfit_seeded(&t, seed, size);
            for (img, mask) in o.items.iter().zip(&o.masks) {
                prop_assert_eq!(&derive_mask(img, 0.05), mask);
                prop_assert!(mask.area() > 0);
            }
        }

        #[test]
        fn augmented_outfits_stay_valid(seed in 0u64..10_000, margin in 0.0f64..=0.08) {
            let o = render_outfit_seeded(&token(seed), seed, 32);
            let a = random_crop_augment(&o, margin, &mut seeded_rng(seed, "crop"));
            prop_assert!(validate_outfit(a).is_ok());
        }
    }
}
