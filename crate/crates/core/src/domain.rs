//! Value types shared by every module. Pixels live in `[-1, 1]` and are
//! stored channel-major (`C×H×W`); conversion to 8-bit happens only at file
//! boundaries.

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub use crate::config::{MaskStrategy, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Upper,
    Bag,
    Lower,
    Shoes,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Upper, Category::Bag, Category::Lower, Category::Shoes];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Upper => "upper",
            Category::Bag => "bag",
            Category::Lower => "lower",
            Category::Shoes => "shoes",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown category {s:?}")))
    }
}

/// Square RGB image, `3×size×size`, values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemImage {
    pub size: usize,
    pub data: Vec<f32>,
}

impl ItemImage {
    pub fn new(size: usize, data: Vec<f32>) -> Result<Self> {
        let img = Self { size, data };
        img.check()?;
        Ok(img)
    }

    pub fn filled(size: usize, value: f32) -> Self {
        Self { size, data: vec![value; 3 * size * size] }
    }

    pub fn check(&self) -> Result<()> {
        if self.size == 0 || self.data.len() != 3 * self.size * self.size {
            return Err(Error::LengthMismatch(format!(
                "image of side {} needs {} values, has {}",
                self.size,
                3 * self.size * self.size,
                self.data.len()
            )));
        }
        if let Some(v) = self.data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(())
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.size + y) * self.size + x]
    }

    /// From interleaved 8-bit RGB (`H×W×3`).
    pub fn from_rgb8(size: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != 3 * size * size {
            return Err(Error::LengthMismatch(format!("expected {} bytes, got {}", 3 * size * size, rgb.len())));
        }
        let plane = size * size;
        let unit = to_unit_range(rgb);
        let mut data = vec![0.0; 3 * plane];
        for p in 0..plane {
            for c in 0..3 {
                data[c * plane + p] = unit[3 * p + c];
            }
        }
        Ok(Self { size, data })
    }

    /// To interleaved 8-bit RGB (`H×W×3`).
    pub fn to_rgb8(&self) -> Result<Vec<u8>> {
        let plane = self.size * self.size;
        let raw = from_unit_range(&self.data)?;
        let mut out = vec![0u8; 3 * plane];
        for p in 0..plane {
            for c in 0..3 {
                out[3 * p + c] = raw[c * plane + p];
            }
        }
        Ok(out)
    }

    /// Stacks images into a `[B, 3, S, S]` tensor.
    pub fn batch<T: Float>(images: &[&ItemImage]) -> Tensor<T> {
        let size = images[0].size;
        let mut data = Vec::with_capacity(images.len() * 3 * size * size);
        for img in images {
            assert_eq!(img.size, size, "mixed image sizes in batch");
            data.extend(img.data.iter().map(|&v| T::of(v as f64)));
        }
        Tensor::from_vec(data, &[images.len(), 3, size, size])
    }

    /// Sample `b` of a `[B, 3, S, S]` tensor, clamped into range.
    pub fn from_tensor<T: Float>(t: &Tensor<T>, b: usize) -> Self {
        let size = t.dim(2);
        let n = 3 * size * size;
        let data = t.data()[b * n..(b + 1) * n].iter().map(|v| (v.as_f64() as f32).clamp(-1.0, 1.0)).collect();
        Self { size, data }
    }
}

/// Square mask whose values are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub size: usize,
    pub data: Vec<f32>,
}

impl BinaryMask {
    pub fn new(size: usize, data: Vec<f32>) -> Result<Self> {
        let m = Self { size, data };
        m.check()?;
        Ok(m)
    }

    pub fn zeros(size: usize) -> Self {
        Self { size, data: vec![0.0; size * size] }
    }

    pub fn check(&self) -> Result<()> {
        if self.size == 0 || self.data.len() != self.size * self.size {
            return Err(Error::LengthMismatch(format!(
                "mask of side {} needs {} values, has {}",
                self.size,
                self.size * self.size,
                self.data.len()
            )));
        }
        if let Some(v) = self.data.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::NotBinary(format!("mask value {v}")));
        }
        Ok(())
    }

    pub fn at(&self, y: usize, x: usize) -> bool {
        self.data[y * self.size + x] == 1.0
    }

    /// Gray8 encoding with `0 ↦ 0`, `1 ↦ 255`.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| if v == 1.0 { 255 } else { 0 }).collect()
    }

    pub fn from_gray8(size: usize, gray: &[u8]) -> Result<Self> {
        if gray.len() != size * size {
            return Err(Error::LengthMismatch(format!("expected {} bytes, got {}", size * size, gray.len())));
        }
        let data = gray
            .iter()
            .map(|&g| match g {
                0 => Ok(0.0),
                255 => Ok(1.0),
                other => Err(Error::NotBinary(format!("gray level {other}"))),
            })
            .collect::<Result<_>>()?;
        Ok(Self { size, data })
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1.0).count()
    }

    /// Stacks masks into a `[B, 1, S, S]` tensor of zeros and ones.
    pub fn batch<T: Float>(masks: &[&BinaryMask]) -> Tensor<T> {
        let size = masks[0].size;
        let mut data = Vec::with_capacity(masks.len() * size * size);
        for m in masks {
            assert_eq!(m.size, size, "mixed mask sizes in batch");
            data.extend(m.data.iter().map(|&v| T::of(v as f64)));
        }
        Tensor::from_vec(data, &[masks.len(), 1, size, size])
    }
}

/// Ordered N-tuple of items, their silhouettes and category labels. The
/// conditioning item sits at `given_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct Outfit {
    pub items: Vec<ItemImage>,
    pub masks: Vec<BinaryMask>,
    pub categories: Vec<Category>,
    pub given_index: usize,
}

impl Outfit {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item(&self, cat: Category) -> Option<&ItemImage> {
        self.categories.iter().position(|&c| c == cat).map(|i| &self.items[i])
    }

    pub fn mask(&self, cat: Category) -> Option<&BinaryMask> {
        self.categories.iter().position(|&c| c == cat).map(|i| &self.masks[i])
    }

    pub fn given(&self) -> &ItemImage {
        &self.items[self.given_index]
    }
}

/// Position-major stacks of a batch of outfits: `items[i]` is `[B,3,S,S]`
/// and `masks[i]` is `[B,1,S,S]` for position `i`.
pub fn stack_outfits<T: Float>(outfits: &[Outfit]) -> (Vec<Tensor<T>>, Vec<Tensor<T>>) {
    let n = outfits[0].len();
    let items = (0..n).map(|i| ItemImage::batch(&outfits.iter().map(|o| &o.items[i]).collect::<Vec<_>>())).collect();
    let masks = (0..n).map(|i| BinaryMask::batch(&outfits.iter().map(|o| &o.masks[i]).collect::<Vec<_>>())).collect();
    (items, masks)
}

/// Checks every structural invariant and hands the outfit back unchanged.
pub fn validate_outfit(o: Outfit) -> Result<Outfit> {
    let n = o.items.len();
    if o.masks.len() != n || o.categories.len() != n {
        return Err(Error::LengthMismatch(format!(
            "{} items, {} masks, {} categories",
            n,
            o.masks.len(),
            o.categories.len()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidOutfit(format!("an outfit needs at least 2 items, got {n}")));
    }
    if o.given_index >= n {
        return Err(Error::InvalidOutfit(format!("given index {} out of 0..{n}", o.given_index)));
    }
    for (i, c) in o.categories.iter().enumerate() {
        if o.categories[..i].contains(c) {
            return Err(Error::DuplicateCategory(c.to_string()));
        }
    }
    let size = o.items[0].size;
    for (img, mask) in o.items.iter().zip(&o.masks) {
        img.check()?;
        mask.check()?;
        if img.size != size || mask.size != size {
            return Err(Error::SizeMismatch(format!("expected side {size}, found image {} / mask {}", img.size, mask.size)));
        }
    }
    Ok(o)
}

/// Affine map `0 ↦ -1`, `255 ↦ 1`.
pub fn to_unit_range(raw: &[u8]) -> Vec<f32> {
    raw.iter().map(|&v| 2.0 * v as f32 / 255.0 - 1.0).collect()
}

/// Inverse of [`to_unit_range`], rounding to the nearest level.
pub fn from_unit_range(values: &[f32]) -> Result<Vec<u8>> {
    values
        .iter()
        .map(|&v| {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange(format!("value {v} outside [-1, 1]")));
            }
            Ok(((v + 1.0) * 127.5).round() as u8)
        })
        .collect()
}
