//! 8-bit PNG reading and writing for items (RGB) and masks (gray).

use crate::domain::{BinaryMask, ItemImage};
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

fn write(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let w = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(data).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(())
}

/// Returns `(width, height, channels, bytes)`.
fn read(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let dec = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = dec.read_info().map_err(png_err)?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| png_err("image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(png_err(format!("{}: expected 8-bit samples", path.display())));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(png_err(format!("{}: unsupported colour type {other:?}", path.display()))),
    };
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, channels, buf))
}

pub fn write_rgb8(path: &Path, size: usize, rgb: &[u8]) -> Result<()> {
    write(path, size, size, png::ColorType::Rgb, rgb)
}

pub fn write_gray8(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    write(path, width, height, png::ColorType::Grayscale, gray)
}

/// Square RGB image; alpha is dropped.
pub fn read_rgb8(path: &Path) -> Result<(usize, Vec<u8>)> {
    let (w, h, ch, buf) = read(path)?;
    if w != h {
        return Err(Error::SizeMismatch(format!("{}: image is {w}x{h}, must be square", path.display())));
    }
    let rgb = match ch {
        3 => buf,
        4 => buf.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        _ => buf.iter().flat_map(|&g| [g, g, g]).collect(),
    };
    Ok((w, rgb))
}

pub fn read_gray8(path: &Path) -> Result<(usize, Vec<u8>)> {
    let (w, h, ch, buf) = read(path)?;
    if w != h || ch != 1 {
        return Err(Error::SizeMismatch(format!("{}: masks must be square single-channel images", path.display())));
    }
    Ok((w, buf))
}

pub fn save_item(path: &Path, img: &ItemImage) -> Result<()> {
    write_rgb8(path, img.size, &img.to_rgb8()?)
}

pub fn load_item(path: &Path) -> Result<ItemImage> {
    let (size, rgb) = read_rgb8(path)?;
    ItemImage::from_rgb8(size, &rgb)
}

pub fn save_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_gray8(path, mask.size, mask.size, &mask.to_gray8())
}

pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let (size, gray) = read_gray8(path)?;
    BinaryMask::from_gray8(size, &gray)
}
