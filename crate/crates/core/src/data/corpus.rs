use super::{io, oracle::RULE_VERSION, random_token, render_outfit, Split, StyleToken};
use crate::domain::{BinaryMask, Category, ItemImage, Outfit};
use crate::error::{Error, Result};
use crate::nn::seeded_rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// One line of `index.jsonl`. Paths are relative to the corpus root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub outfit_id: String,
    pub split: Split,
    pub categories: Vec<Category>,
    pub images: Vec<String>,
    pub masks: Vec<String>,
    pub style_token: StyleToken,
    pub rule_version: String,
}

/// An entry with its pixels held as 8-bit data.
#[derive(Debug, Clone)]
pub struct Record {
    pub entry: CorpusEntry,
    pub rgb: Vec<Vec<u8>>,
    pub gray: Vec<Vec<u8>>,
}

impl Record {
    /// The outfit arranged in `order`, with the given item at `given_index`.
    pub fn outfit(&self, size: usize, order: &[Category], given_index: usize) -> Result<Outfit> {
        let mut o = Outfit { items: Vec::new(), masks: Vec::new(), categories: order.to_vec(), given_index };
        for cat in order {
            let i = self
                .entry
                .categories
                .iter()
                .position(|c| c == cat)
                .ok_or_else(|| Error::Corpus(format!("outfit {} has no {cat}", self.entry.outfit_id)))?;
            o.items.push(ItemImage::from_rgb8(size, &self.rgb[i])?);
            o.masks.push(BinaryMask::from_gray8(size, &self.gray[i])?);
        }
        Ok(o)
    }

    pub fn mask(&self, size: usize, cat: Category) -> Result<BinaryMask> {
        let i = self.entry.categories.iter().position(|&c| c == cat).ok_or_else(|| Error::Corpus(format!("no {cat}")))?;
        BinaryMask::from_gray8(size, &self.gray[i])
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub image_size: usize,
    pub records: Vec<Record>,
}

/// Split sizes for `n` outfits at 70/10/20.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = (0.7 * n as f64).round() as usize;
    let val = (0.1 * n as f64).round() as usize;
    (train, val, n - train - val)
}

impl Corpus {
    /// Renders `n` outfits with distinct palettes and writes the directory
    /// layout under `out_dir`.
    pub fn generate(n: usize, seed: u64, size: usize, out_dir: &Path) -> Result<Corpus> {
        if n < 10 {
            return Err(Error::Corpus(format!("need at least 10 outfits to split, asked for {n}")));
        }
        let mut token_rng = seeded_rng(seed, "tokens");
        let mut seen = HashSet::new();
        let mut tokens = Vec::with_capacity(n);
        while tokens.len() < n {
            let t = random_token(&mut token_rng);
            if seen.insert(t.palette_key()) {
                tokens.push(t);
            }
        }
        let (n_train, n_val, _) = split_counts(n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut seeded_rng(seed, "split"));
        let mut splits = vec![Split::Test; n];
        for (rank, &i) in perm.iter().enumerate() {
            splits[i] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }

        std::fs::create_dir_all(out_dir)?;
        let order = Category::ALL;
        let mut index = String::new();
        let mut records = Vec::with_capacity(n);
        for (i, token) in tokens.into_iter().enumerate() {
            let id = format!("o{i:05}");
            let mut rng = seeded_rng(seed, &format!("outfit-{i}"));
            let o = render_outfit(&token, &order, 0, size, &mut rng);
            let mut rgb = Vec::new();
            let mut gray = Vec::new();
            let mut images = Vec::new();
            let mut masks = Vec::new();
            for (k, cat) in order.iter().enumerate() {
                let img_rel = format!("images/{id}/{cat}.png");
                let mask_rel = format!("masks/{id}/{cat}.png");
                let bytes = o.items[k].to_rgb8()?;
                io::write_rgb8(&out_dir.join(&img_rel), size, &bytes)?;
                let g = o.masks[k].to_gray8();
                io::write_gray8(&out_dir.join(&mask_rel), size, size, &g)?;
                rgb.push(bytes);
                gray.push(g);
                images.push(img_rel);
                masks.push(mask_rel);
            }
            let entry = CorpusEntry {
                outfit_id: id,
                split: splits[i],
                categories: order.to_vec(),
                images,
                masks,
                style_token: token,
                rule_version: RULE_VERSION.to_string(),
            };
            writeln!(index, "{}", serde_json::to_string(&entry)?).expect("write to string");
            records.push(Record { entry, rgb, gray });
        }
        std::fs::write(out_dir.join("index.jsonl"), index)?;
        Ok(Corpus { root: out_dir.to_path_buf(), image_size: size, records })
    }

    pub fn load(root: &Path) -> Result<Corpus> {
        let text = std::fs::read_to_string(root.join("index.jsonl"))
            .map_err(|e| Error::Corpus(format!("{}: {e}", root.join("index.jsonl").display())))?;
        let mut records = Vec::new();
        let mut size = None;
        for (ln, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let entry: CorpusEntry = serde_json::from_str(line).map_err(|e| Error::Corpus(format!("index line {}: {e}", ln + 1)))?;
            if entry.rule_version != RULE_VERSION {
                return Err(Error::RuleVersion { expected: RULE_VERSION.into(), found: entry.rule_version });
            }
            if entry.images.len() != entry.categories.len() || entry.masks.len() != entry.categories.len() {
                return Err(Error::Corpus(format!("outfit {}: file lists do not match categories", entry.outfit_id)));
            }
            let mut rgb = Vec::new();
            let mut gray = Vec::new();
            for (img, mask) in entry.images.iter().zip(&entry.masks) {
                let (s, bytes) = io::read_rgb8(&root.join(img))?;
                let (sm, g) = io::read_gray8(&root.join(mask))?;
                let expected = *size.get_or_insert(s);
                if s != expected || sm != expected {
                    return Err(Error::SizeMismatch(format!("outfit {}: mixed image sizes", entry.outfit_id)));
                }
                BinaryMask::from_gray8(sm, &g)?;
                rgb.push(bytes);
                gray.push(g);
            }
            records.push(Record { entry, rgb, gray });
        }
        let image_size = size.ok_or_else(|| Error::Corpus("empty index".into()))?;
        Ok(Corpus { root: root.to_path_buf(), image_size, records })
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.records.iter().enumerate().filter(|(_, r)| r.entry.split == split).map(|(i, _)| i).collect()
    }

    pub fn outfit(&self, idx: usize, order: &[Category], given_index: usize) -> Result<Outfit> {
        self.records[idx].outfit(self.image_size, order, given_index)
    }

    pub fn outfits(&self, split: Split, order: &[Category], given_index: usize) -> Result<Vec<Outfit>> {
        self.indices(split).into_iter().map(|i| self.outfit(i, order, given_index)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{derive_mask, oracle_compatible};
    use crate::domain::validate_outfit;

    #[test]
    fn generate_load_and_regenerate() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let c = Corpus::generate(100, 7, 32, a.path()).unwrap();
        let count = |s| c.indices(s).len();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (70, 10, 20));

        Corpus::generate(100, 7, 32, b.path()).unwrap();
        let ia = std::fs::read(a.path().join("index.jsonl")).unwrap();
        assert_eq!(ia, std::fs::read(b.path().join("index.jsonl")).unwrap());
        let p = "images/o00042/bag.png";
        assert_eq!(std::fs::read(a.path().join(p)).unwrap(), std::fs::read(b.path().join(p)).unwrap());

        let loaded = Corpus::load(a.path()).unwrap();
        assert_eq!(loaded.records.len(), 100);
        let keys: HashSet<_> = loaded.records.iter().map(|r| r.entry.style_token.palette_key()).collect();
        assert_eq!(keys.len(), 100);
        for i in 0..100 {
            let o = validate_outfit(loaded.outfit(i, &Category::ALL, 0).unwrap()).unwrap();
            assert!(oracle_compatible(&o, RULE_VERSION).unwrap());
            for (img, m) in o.items.iter().zip(&o.masks) {
                assert_eq!(&derive_mask(img, 0.05), m);
            }
        }
        assert!(Corpus::generate(9, 7, 32, a.path()).is_err());
    }
}
