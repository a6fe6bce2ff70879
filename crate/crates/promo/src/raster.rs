//! PNG output (with the config hash in a text chunk) and comparison sheets.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use promo_core::image::Image;

use crate::error::{Error, Result};

pub const HASH_KEYWORD: &str = "promo-config-hash";
const GAP: usize = 2;
const SHEET_BACKGROUND: u8 = 255;

/// 8-bit RGB raster, row-major interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

/// Maps `[0, 1]` to 8 bits as `round(256 v)` clamped to 255, which is exact
/// for values of the form `k / 256`.
pub fn to_u8(v: f32) -> u8 {
    (v * 256.0).round().clamp(0.0, 255.0) as u8
}

pub fn to_rgb8(img: &Image) -> Rgb8 {
    let (h, w, c) = img.shape();
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                data.push(to_u8(img.get(y, x, ch.min(c - 1))));
            }
        }
    }
    Rgb8 { width: w, height: h, data }
}

pub fn write_png(img: &Rgb8, path: &Path, config_hash: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.add_text_chunk(HASH_KEYWORD.to_string(), config_hash.to_string())
        .map_err(|e| Error::Png(e.to_string()))?;
    let mut w = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
    w.write_image_data(&img.data).map_err(|e| Error::Png(e.to_string()))?;
    w.finish().map_err(|e| Error::Png(e.to_string()))
}

pub fn save_png(img: &Image, path: &Path, config_hash: &str) -> Result<()> {
    write_png(&to_rgb8(img), path, config_hash)
}

/// Reads an 8-bit RGB PNG and its embedded config hash, if any.
pub fn read_png(path: &Path) -> Result<(Rgb8, Option<String>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let dec = png::Decoder::new(BufReader::new(file));
    let mut reader = dec.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let hash = reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|t| t.keyword == HASH_KEYWORD)
        .map(|t| t.text.clone());
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::Png("oversized image".into()))?];
    let frame = reader.next_frame(&mut buf).map_err(|e| Error::Png(e.to_string()))?;
    if frame.color_type != png::ColorType::Rgb || frame.bit_depth != png::BitDepth::Eight {
        return Err(Error::Png("expected 8-bit RGB".into()));
    }
    buf.truncate(frame.buffer_size());
    let img = Rgb8 {
        width: frame.width as usize,
        height: frame.height as usize,
        data: buf,
    };
    Ok((img, hash))
}

/// Tiles rows of images left to right, top to bottom, with a white gutter.
/// Tiles are top-left aligned in cells sized to the largest tile.
pub fn grid(rows: &[Vec<Image>]) -> Rgb8 {
    let cell_h = rows.iter().flatten().map(|i| i.height).max().unwrap_or(0);
    let cell_w = rows.iter().flatten().map(|i| i.width).max().unwrap_or(0);
    let ncols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let width = ncols * cell_w + (ncols + 1) * GAP;
    let height = rows.len() * cell_h + (rows.len() + 1) * GAP;
    let mut data = vec![SHEET_BACKGROUND; width * height * 3];
    for (r, row) in rows.iter().enumerate() {
        for (c, tile) in row.iter().enumerate() {
            let t = to_rgb8(tile);
            let x0 = GAP + c * (cell_w + GAP);
            let y0 = GAP + r * (cell_h + GAP);
            for y in 0..t.height {
                let src = &t.data[y * t.width * 3..(y + 1) * t.width * 3];
                let at = ((y0 + y) * width + x0) * 3;
                data[at..at + src.len()].copy_from_slice(src);
            }
        }
    }
    Rgb8 { width, height, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dyadic_values_and_hash_survive_png() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::rgb(3, 4);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i * 7 % 256) as f32 / 256.0;
        }
        let path = dir.path().join("a.png");
        save_png(&img, &path, "abc123").unwrap();
        let (back, hash) = read_png(&path).unwrap();
        assert_eq!(hash.as_deref(), Some("abc123"));
        assert_eq!(back, to_rgb8(&img));
        for y in 0..3 {
            for x in 0..4 {
                for c in 0..3 {
                    assert_eq!(back.data[(y * 4 + x) * 3 + c] as f32 / 256.0, img.get(y, x, c));
                }
            }
        }
    }

    #[test]
    fn grid_layout() {
        let a = Image::filled(4, 4, 3, 0.0);
        let b = Image::filled(2, 3, 3, 0.5);
        let g = grid(&[vec![a.clone(), b], vec![a]]);
        assert_eq!((g.width, g.height), (2 * 4 + 3 * GAP, 2 * 4 + 3 * GAP));
        let px = |x: usize, y: usize| g.data[(y * g.width + x) * 3];
        assert_eq!(px(GAP, GAP), 0);
        assert_eq!(px(2 * GAP + 4, GAP), 128);
        assert_eq!(px(0, 0), 255);
    }
}
