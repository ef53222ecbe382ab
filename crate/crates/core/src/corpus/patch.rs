use std::path::Path;

use image::{DynamicImage, ImageEncoder};

use super::geometry::BBox;
use crate::error::{Error, Result};

/// An 8-bit image patch stored row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelPatch {
    pub height: u32,
    pub width: u32,
    pub channels: u8,
    pub pixels: Vec<u8>,
    /// `(height, width)` of the crop before normalization.
    pub original_size: (u32, u32),
}

impl PixelPatch {
    pub fn new(height: u32, width: u32, channels: u8, pixels: Vec<u8>) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        assert_eq!(
            pixels.len(),
            height as usize * width as usize * channels as usize
        );
        Self {
            height,
            width,
            channels,
            pixels,
            original_size: (height, width),
        }
    }

    pub fn filled(height: u32, width: u32, channels: u8, value: u8) -> Self {
        let len = height as usize * width as usize * channels as usize;
        Self::new(height, width, channels, vec![value; len])
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.height, self.width)
    }

    pub fn pixel(&self, row: u32, col: u32) -> &[u8] {
        let c = self.channels as usize;
        let i = (row as usize * self.width as usize + col as usize) * c;
        &self.pixels[i..i + c]
    }

    fn pixel_mut(&mut self, row: u32, col: u32) -> &mut [u8] {
        let c = self.channels as usize;
        let i = (row as usize * self.width as usize + col as usize) * c;
        &mut self.pixels[i..i + c]
    }

    /// Grayscale intensities in `[0, 1]` using ITU-R BT.601 luma weights.
    pub fn luma(&self) -> Vec<f64> {
        match self.channels {
            1 => self.pixels.iter().map(|&v| v as f64 / 255.0).collect(),
            _ => self
                .pixels
                .chunks_exact(3)
                .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
                .collect(),
        }
    }

    /// Converts a decoded image, keeping grayscale as one channel and
    /// everything else as RGB.
    pub fn from_image(img: &DynamicImage) -> Self {
        match img {
            DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLuma16(_) => {
                let g = img.to_luma8();
                Self::new(g.height(), g.width(), 1, g.into_raw())
            }
            _ => {
                let rgb = img.to_rgb8();
                Self::new(rgb.height(), rgb.width(), 3, rgb.into_raw())
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        Ok(Self::from_image(&img))
    }

    /// Copies out the pixels under `bbox`, which must lie inside the patch.
    pub fn crop(&self, bbox: &BBox) -> Self {
        assert!(bbox.right() <= self.width && bbox.bottom() <= self.height);
        let c = self.channels as usize;
        let mut out = Vec::with_capacity(bbox.area() as usize * c);
        for r in bbox.y..bbox.bottom() {
            let start = (r as usize * self.width as usize + bbox.x as usize) * c;
            out.extend_from_slice(&self.pixels[start..start + bbox.width as usize * c]);
        }
        Self::new(bbox.height, bbox.width, self.channels, out)
    }

    /// Zeroes every pixel for which `blank(row, col)` holds.
    pub(crate) fn blank_where(&mut self, mut blank: impl FnMut(u32, u32) -> bool) {
        for r in 0..self.height {
            for c in 0..self.width {
                if blank(r, c) {
                    self.pixel_mut(r, c).fill(0);
                }
            }
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::codecs::png::PngEncoder::new(&mut buf)
            .write_image(&self.pixels, self.width, self.height, color)
            .map_err(|e| Error::image("<png>", e))?;
        Ok(buf)
    }
}

/// Bilinear resample with pixel-centre alignment.
fn resize_bilinear(src: &PixelPatch, out_h: u32, out_w: u32) -> Vec<u8> {
    let c = src.channels as usize;
    let sy = src.height as f64 / out_h as f64;
    let sx = src.width as f64 / out_w as f64;
    let max_r = src.height as f64 - 1.0;
    let max_c = src.width as f64 - 1.0;
    let mut out = Vec::with_capacity(out_h as usize * out_w as usize * c);
    for r in 0..out_h {
        let fy = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, max_r);
        let y0 = fy.floor() as u32;
        let y1 = (y0 + 1).min(src.height - 1);
        let wy = fy - y0 as f64;
        for col in 0..out_w {
            let fx = ((col as f64 + 0.5) * sx - 0.5).clamp(0.0, max_c);
            let x0 = fx.floor() as u32;
            let x1 = (x0 + 1).min(src.width - 1);
            let wx = fx - x0 as f64;
            let (p00, p01) = (src.pixel(y0, x0), src.pixel(y0, x1));
            let (p10, p11) = (src.pixel(y1, x0), src.pixel(y1, x1));
            for ch in 0..c {
                let top = p00[ch] as f64 + (p01[ch] as f64 - p00[ch] as f64) * wx;
                let bot = p10[ch] as f64 + (p11[ch] as f64 - p10[ch] as f64) * wx;
                let v = top + (bot - top) * wy;
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

/// Size of the content area after an aspect-preserving fit of
/// `(height, width)` into a `target` square.
pub fn fitted_size(height: u32, width: u32, target: u32) -> (u32, u32) {
    let long = height.max(width) as f64;
    let scale = |side: u32| ((side as f64 * target as f64 / long).round() as u32).clamp(1, target);
    if height >= width {
        (target, scale(width))
    } else {
        (scale(height), target)
    }
}

/// Resizes `patch` so that its longer side equals `target` (bilinear,
/// aspect preserving) and centres it on a zero-valued `target`×`target`
/// canvas. Already-normalized patches come back unchanged.
pub fn normalize_patch(patch: &PixelPatch, target: u32) -> Result<PixelPatch> {
    if target < 8 {
        return Err(Error::Validation(format!(
            "target size {target} below minimum 8"
        )));
    }
    if patch.height == target && patch.width == target {
        return Ok(patch.clone());
    }
    let (h, w) = fitted_size(patch.height, patch.width, target);
    let content = PixelPatch::new(h, w, patch.channels, resize_bilinear(patch, h, w));
    let mut out = PixelPatch::filled(target, target, patch.channels, 0);
    let (top, left) = ((target - h) / 2, (target - w) / 2);
    let c = patch.channels as usize;
    for r in 0..h {
        let dst = (((top + r) * target + left) as usize) * c;
        let src = (r * w) as usize * c;
        out.pixels[dst..dst + w as usize * c]
            .copy_from_slice(&content.pixels[src..src + w as usize * c]);
    }
    out.original_size = patch.original_size;
    Ok(out)
}
