//! Small raster helpers shared by every stage.
//!
//! Grayscale conversion is fixed to the ITU-R 601 luma weights and rounding
//! below; the `image` crate's own conversion uses different weights, so all
//! code in this crate goes through [`rgb_to_gray`] / [`dynamic_to_gray`].

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, ImageFormat, Pixel, RgbImage};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Luma of one RGB triplet: `round(0.299R + 0.587G + 0.114B)` clamped to `[0,255]`.
#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    let v = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
    v.round().clamp(0.0, 255.0) as u8
}

pub fn rgb_to_gray(rgb: &RgbImage) -> GrayImage {
    let (w, h) = rgb.dimensions();
    let data = rgb
        .as_raw()
        .chunks_exact(3)
        .map(|p| luma(p[0], p[1], p[2]))
        .collect();
    GrayImage::from_raw(w, h, data).expect("buffer sized from source")
}

/// Single-channel 8-bit images pass through untouched; everything else is
/// converted to RGB first and then to luma.
pub fn dynamic_to_gray(img: &DynamicImage) -> GrayImage {
    match img {
        DynamicImage::ImageLuma8(g) => g.clone(),
        other => rgb_to_gray(&other.to_rgb8()),
    }
}

/// Integer rectangle in pixel space, half-open on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl Rect {
    pub fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> i64 {
        (self.x1 - self.x0).max(0)
    }

    pub fn height(&self) -> i64 {
        (self.y1 - self.y0).max(0)
    }

    pub fn is_empty(&self) -> bool {
        self.width() == 0 || self.height() == 0
    }

    pub fn translate(&self, dx: i64, dy: i64) -> Rect {
        Rect::new(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)
    }

    /// Clamps every coordinate into `[0,w] x [0,h]`. Inverted ranges collapse
    /// to empty rather than swapping.
    pub fn clamp_to(&self, w: u32, h: u32) -> Rect {
        let cx = |v: i64| v.clamp(0, i64::from(w));
        let cy = |v: i64| v.clamp(0, i64::from(h));
        let (x0, y0) = (cx(self.x0), cy(self.y0));
        let (x1, y1) = (cx(self.x1).max(x0), cy(self.y1).max(y0));
        Rect::new(x0, y0, x1, y1)
    }
}

/// Copies `rect` (clamped to the image) out of `img`. Empty rects give a 0x0 image.
pub fn crop<P: Pixel>(img: &ImageBuffer<P, Vec<P::Subpixel>>, rect: Rect) -> ImageBuffer<P, Vec<P::Subpixel>> {
    let r = rect.clamp_to(img.width(), img.height());
    let (w, h) = (r.width() as u32, r.height() as u32);
    ImageBuffer::from_fn(w, h, |x, y| *img.get_pixel(r.x0 as u32 + x, r.y0 as u32 + y))
}

/// Nearest-neighbor resample: destination pixel `(x, y)` reads source
/// `(floor(x*sw/dw), floor(y*sh/dh))`.
pub fn resample_nearest<P: Pixel>(
    img: &ImageBuffer<P, Vec<P::Subpixel>>,
    dw: u32,
    dh: u32,
) -> ImageBuffer<P, Vec<P::Subpixel>> {
    let (sw, sh) = img.dimensions();
    ImageBuffer::from_fn(dw, dh, |x, y| {
        let sx = (u64::from(x) * u64::from(sw) / u64::from(dw)) as u32;
        let sy = (u64::from(y) * u64::from(sh) / u64::from(dh)) as u32;
        *img.get_pixel(sx, sy)
    })
}

pub fn encode_png(img: &DynamicImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn decode_image(bytes: &[u8]) -> Result<DynamicImage> {
    Ok(image::load_from_memory(bytes)?)
}

pub fn load_image(path: &Path) -> Result<DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::storage(path, e))?;
    decode_image(&bytes)
}

/// Lowercase hex SHA-256 of a byte string; used as the stub backend's image id.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Image files directly inside `dir`, sorted lexicographically by file name.
pub fn list_images(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::storage(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::storage(dir, e))?;
        let path = entry.path();
        if path.is_file() && is_image_file(&path) {
            out.push(path);
        }
    }
    out.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Luma, Rgb};

    #[test]
    fn luma_weights_and_rounding() {
        assert_eq!(luma(0, 0, 0), 0);
        assert_eq!(luma(255, 255, 255), 255);
        // 0.299*100 + 0.587*50 + 0.114*200 = 29.9 + 29.35 + 22.8 = 82.05
        assert_eq!(luma(100, 50, 200), 82);
        // 0.299*255 = 76.245
        assert_eq!(luma(255, 0, 0), 76);
    }

    #[test]
    fn rect_clamp_collapses_inverted_ranges() {
        let r = Rect::new(50, 40, 10, 100).clamp_to(30, 30);
        assert!(r.is_empty());
        let r = Rect::new(-5, -5, 10, 10).clamp_to(8, 8);
        assert_eq!(r, Rect::new(0, 0, 8, 8));
    }

    #[test]
    fn crop_reads_inside_bounds_only() {
        let img = GrayImage::from_fn(10, 10, |x, y| Luma([(x + 10 * y) as u8]));
        let c = crop(&img, Rect::new(8, 8, 20, 20));
        assert_eq!(c.dimensions(), (2, 2));
        assert_eq!(c.get_pixel(0, 0)[0], 88);
        assert_eq!(crop(&img, Rect::new(5, 5, 5, 9)).dimensions(), (0, 4));
    }

    #[test]
    fn nearest_resample_identity_and_upscale() {
        let img = RgbImage::from_fn(4, 3, |x, y| Rgb([x as u8, y as u8, 7]));
        assert_eq!(resample_nearest(&img, 4, 3), img);
        let up = resample_nearest(&img, 8, 6);
        assert_eq!(up.get_pixel(7, 5), img.get_pixel(3, 2));
        assert_eq!(up.get_pixel(1, 1), img.get_pixel(0, 0));
    }

    #[test]
    fn png_round_trip_is_lossless() {
        let img = RgbImage::from_fn(5, 4, |x, y| Rgb([x as u8 * 40, y as u8 * 60, 3]));
        let bytes = encode_png(&DynamicImage::ImageRgb8(img.clone())).unwrap();
        assert_eq!(decode_image(&bytes).unwrap().to_rgb8(), img);
        assert_eq!(digest_hex(&bytes), digest_hex(&bytes.clone()));
        assert_eq!(digest_hex(b"").len(), 64);
    }
}
