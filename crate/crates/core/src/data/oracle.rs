//! Rule-based compatibility scorer: greedy dominant-colour clustering per
//! item, then palette-set comparison across items.

use crate::domain::{BinaryMask, ItemImage, Outfit};
use crate::error::{Error, Result};

pub const RULE_VERSION: &str = "palette-v1";

#[derive(Debug, Clone, Copy)]
pub struct Oracle {
    /// Per-channel tolerance in 8-bit levels.
    pub tol: u8,
    /// Minimum fraction of foreground pixels for a cluster to count.
    pub min_share: f64,
}

impl Default for Oracle {
    fn default() -> Self {
        Self { tol: 30, min_share: 0.1 }
    }
}

const BIN: usize = 10;
const BINS: usize = 256 / BIN + 1;

fn close(a: [u8; 3], b: [u8; 3], tol: u8) -> bool {
    a.iter().zip(&b).all(|(x, y)| x.abs_diff(*y) <= tol)
}

/// Cluster centres covering at least `min_share` of the masked pixels, in
/// order of discovery.
pub fn dominant_palette(img: &ItemImage, mask: &BinaryMask, oracle: &Oracle) -> Vec<[u8; 3]> {
    let plane = img.size * img.size;
    let rgb = match img.to_rgb8() {
        Ok(v) => v,
        Err(_) => return Vec::new(),
    };
    let mut pixels: Vec<[u8; 3]> = (0..plane).filter(|&p| mask.data[p] == 1.0).map(|p| [rgb[3 * p], rgb[3 * p + 1], rgb[3 * p + 2]]).collect();
    let total = pixels.len();
    let mut palette = Vec::new();
    if total == 0 {
        return palette;
    }
    let reach = (oracle.tol as usize).div_ceil(BIN);
    let min_count = (oracle.min_share * total as f64).ceil() as usize;
    while pixels.len() >= min_count.max(1) {
        let mut hist = vec![0usize; BINS * BINS * BINS];
        let key = |c: [u8; 3]| (c[0] as usize / BIN * BINS + c[1] as usize / BIN) * BINS + c[2] as usize / BIN;
        for &c in &pixels {
            hist[key(c)] += 1;
        }
        // Density of a bin: pixels in the surrounding box of bins.
        let mut best = (0usize, 0usize);
        for (k, &count) in hist.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let (r, g, b) = (k / (BINS * BINS), k / BINS % BINS, k % BINS);
            let mut dens = 0;
            for rr in r.saturating_sub(reach)..=(r + reach).min(BINS - 1) {
                for gg in g.saturating_sub(reach)..=(g + reach).min(BINS - 1) {
                    for bb in b.saturating_sub(reach)..=(b + reach).min(BINS - 1) {
                        dens += hist[(rr * BINS + gg) * BINS + bb];
                    }
                }
            }
            if dens > best.1 {
                best = (k, dens);
            }
        }
        let k = best.0;
        let centre = [(k / (BINS * BINS) * BIN + BIN / 2) as u8, (k / BINS % BINS * BIN + BIN / 2) as u8, (k % BINS * BIN + BIN / 2) as u8];
        let near: Vec<[u8; 3]> = pixels.iter().copied().filter(|&c| close(c, centre, oracle.tol)).collect();
        let seed = if near.is_empty() {
            pixels[0]
        } else {
            let mut s = [0usize; 3];
            for c in &near {
                for i in 0..3 {
                    s[i] += c[i] as usize;
                }
            }
            s.map(|v| ((v as f64 / near.len() as f64).round()) as u8)
        };
        let before = pixels.len();
        pixels.retain(|&c| !close(c, seed, oracle.tol));
        let taken = before - pixels.len();
        if taken == 0 {
            break;
        }
        if taken >= min_count {
            palette.push(seed);
        }
    }
    palette
}

/// Set equality within tolerance.
pub fn palettes_match(a: &[[u8; 3]], b: &[[u8; 3]], tol: u8) -> bool {
    a.len() == b.len() && a.iter().all(|&x| b.iter().any(|&y| close(x, y, tol))) && b.iter().all(|&y| a.iter().any(|&x| close(x, y, tol)))
}

impl Oracle {
    pub fn compatible(&self, o: &Outfit) -> bool {
        let palettes: Vec<Vec<[u8; 3]>> = o.items.iter().zip(&o.masks).map(|(img, m)| dominant_palette(img, m, self)).collect();
        !palettes[0].is_empty() && palettes.iter().all(|p| palettes_match(p, &palettes[0], self.tol))
    }

    /// 1 for compatible, 0 otherwise.
    pub fn score(&self, o: &Outfit) -> f64 {
        if self.compatible(o) {
            1.0
        } else {
            0.0
        }
    }
}

/// Default oracle, after checking that the outfit comes from this rule family.
pub fn oracle_compatible(o: &Outfit, rule_version: &str) -> Result<bool> {
    if rule_version != RULE_VERSION {
        return Err(Error::RuleVersion { expected: RULE_VERSION.into(), found: rule_version.into() });
    }
    Ok(Oracle::default().compatible(o))
}
