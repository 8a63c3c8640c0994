//! Procedural item rendering. Geometry is authored on a 64-unit canvas and
//! sampled at pixel centers for any output size. Textures are anchored to the
//! canvas, so a token fully determines the colour at every covered point.

use super::{Pattern, StyleToken};
use crate::domain::{BinaryMask, Category, ItemImage, Outfit};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Poly = Vec<(f64, f64)>;

struct Part {
    outline: Poly,
    holes: Vec<Poly>,
}

fn part(outline: &[(f64, f64)]) -> Part {
    Part { outline: outline.to_vec(), holes: Vec::new() }
}

fn template(cat: Category) -> Vec<Part> {
    match cat {
        Category::Upper => vec![part(&[
            (22.0, 8.0),
            (28.0, 8.0),
            (32.0, 12.0),
            (36.0, 8.0),
            (42.0, 8.0),
            (56.0, 18.0),
            (50.0, 27.0),
            (46.0, 23.0),
            (46.0, 56.0),
            (18.0, 56.0),
            (18.0, 23.0),
            (14.0, 27.0),
            (8.0, 18.0),
        ])],
        Category::Bag => vec![
            part(&[(14.0, 26.0), (50.0, 26.0), (53.0, 54.0), (11.0, 54.0)]),
            Part {
                outline: vec![(21.0, 26.5), (24.0, 11.0), (40.0, 11.0), (43.0, 26.5)],
                holes: vec![vec![(27.0, 26.5), (28.5, 16.0), (35.5, 16.0), (37.0, 26.5)]],
            },
        ],
        Category::Lower => vec![part(&[(18.0, 6.0), (46.0, 6.0), (51.0, 58.0), (36.0, 58.0), (32.0, 22.0), (28.0, 58.0), (13.0, 58.0)])],
        Category::Shoes => vec![part(&[
            (8.0, 28.0),
            (21.0, 28.0),
            (25.0, 35.0),
            (50.0, 39.0),
            (56.0, 45.0),
            (56.0, 52.0),
            (8.0, 52.0),
        ])],
    }
}

fn inside(poly: &Poly, x: f64, y: f64) -> bool {
    let mut hit = false;
    let n = poly.len();
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[(i + n - 1) % n];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            hit = !hit;
        }
    }
    hit
}

/// Random placement applied to a template: shift and per-axis scale about
/// the canvas center.
#[derive(Debug, Clone, Copy)]
struct Jitter {
    dx: f64,
    dy: f64,
    sx: f64,
    sy: f64,
}

impl Jitter {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        Self {
            dx: rng.random_range(-3.0..=3.0),
            dy: rng.random_range(-3.0..=3.0),
            sx: rng.random_range(0.92..=1.08),
            sy: rng.random_range(0.92..=1.08),
        }
    }

    fn apply(&self, poly: &Poly) -> Poly {
        poly.iter().map(|&(x, y)| (32.0 + (x - 32.0) * self.sx + self.dx, 32.0 + (y - 32.0) * self.sy + self.dy)).collect()
    }
}

/// Palette index of the texture at canvas point `(u, v)`.
pub(crate) fn texture_index(token: &StyleToken, u: f64, v: f64) -> usize {
    let n = token.palette.len();
    let s = token.pattern_scale as f64;
    match token.pattern {
        Pattern::Stripes => (v / s).floor() as usize % n,
        Pattern::Checker => ((u / s).floor() as usize + (v / s).floor() as usize) % n,
        Pattern::Solid => (u / 12.0).floor() as usize % n,
        Pattern::Dots => {
            let cell = 2.0 * s;
            let (cu, cv) = ((u / cell).floor(), (v / cell).floor());
            let (du, dv) = (u - (cu + 0.5) * cell, v - (cv + 0.5) * cell);
            if du * du + dv * dv <= (0.8 * s) * (0.8 * s) {
                1 + (cu as usize + cv as usize) % (n - 1)
            } else {
                0
            }
        }
    }
}

/// Renders one item of `cat` on a white canvas of side `size`.
pub fn render_item(token: &StyleToken, cat: Category, size: usize, rng: &mut ChaCha8Rng) -> (ItemImage, BinaryMask) {
    let jitter = Jitter::draw(rng);
    let parts: Vec<(Poly, Vec<Poly>)> =
        template(cat).iter().map(|p| (jitter.apply(&p.outline), p.holes.iter().map(|h| jitter.apply(h)).collect())).collect();
    let plane = size * size;
    let mut img = ItemImage::filled(size, 1.0);
    let mut mask = BinaryMask::zeros(size);
    let unit = 64.0 / size as f64;
    let colors: Vec<[f32; 3]> = token.palette.iter().map(|c| c.map(|v| 2.0 * v as f32 / 255.0 - 1.0)).collect();
    for y in 0..size {
        for x in 0..size {
            let (u, v) = ((x as f64 + 0.5) * unit, (y as f64 + 0.5) * unit);
            let covered = parts.iter().any(|(outline, holes)| inside(outline, u, v) && !holes.iter().any(|h| inside(h, u, v)));
            if covered {
                let p = y * size + x;
                mask.data[p] = 1.0;
                let col = colors[texture_index(token, u, v)];
                for c in 0..3 {
                    img.data[c * plane + p] = col[c];
                }
            }
        }
    }
    (img, mask)
}

/// Renders every category of `order` from one token.
pub fn render_outfit(token: &StyleToken, order: &[Category], given_index: usize, size: usize, rng: &mut ChaCha8Rng) -> Outfit {
    let mut items = Vec::new();
    let mut masks = Vec::new();
    for &cat in order {
        let (img, mask) = render_item(token, cat, size, rng);
        items.push(img);
        masks.push(mask);
    }
    Outfit { items, masks, categories: order.to_vec(), given_index }
}
