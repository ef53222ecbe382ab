//! Synthetic inspection images in an MVTec-style directory layout.
//!
//! Each image shows a striped object texture on the left part of the frame
//! (the declared foreground) and independent full-range noise on the right
//! (the background). Defects are elliptical regions where the object texture
//! is repainted with added Gaussian noise, so a defect crop is a noisy copy of the
//! surrounding foreground and unrelated to the background.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotationManifest, BBox, ImageRecord, PixelPatch, RegionAnnotation};
use crate::error::{Error, Result};
use crate::util::{mix_seed, write_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dataset_name: String,
    pub object_type: String,
    pub classes: Vec<String>,
    pub images_per_class: usize,
    pub good_images: usize,
    /// Square image side in pixels.
    pub size: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dataset_name: "synthetic".into(),
            object_type: "tile".into(),
            classes: vec!["crack".into(), "scratch".into(), "stain".into()],
            images_per_class: 10,
            good_images: 2,
            size: 128,
            seed: crate::DEFAULT_SEED,
        }
    }
}

const STRIPE_PERIOD: f64 = 9.0;
const STRIPE_AMPLITUDE: f64 = 20.0;
const TEXTURE_NOISE: f64 = 6.0;
const DEFECT_NOISE: f64 = 20.0;
const BACKGROUND_MAX: f64 = 255.0;

struct Canvas {
    size: u32,
    fg_width: u32,
    rgb: Vec<u8>,
    texture: Vec<f64>,
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn tint(v: f64) -> [u8; 3] {
    [clamp_u8(v), clamp_u8(0.9 * v), clamp_u8(0.7 * v)]
}

fn paint_base(size: u32, rng: &mut ChaCha8Rng) -> Canvas {
    let fg_width = size * 5 / 8;
    let noise = Normal::new(0.0, TEXTURE_NOISE).expect("valid sigma");
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let angle: f64 = rng.random_range(0.3..0.6);
    let (ca, sa) = (angle.cos(), angle.sin());
    let n = (size * size) as usize;
    let mut rgb = Vec::with_capacity(n * 3);
    let mut texture = vec![0.0; n];
    for r in 0..size {
        for c in 0..size {
            if c < fg_width {
                let t =
                    (c as f64 * ca + r as f64 * sa) / STRIPE_PERIOD * std::f64::consts::TAU + phase;
                let v = 170.0 + STRIPE_AMPLITUDE * t.sin();
                texture[(r * size + c) as usize] = v;
                rgb.extend(tint(v + noise.sample(rng)));
            } else {
                for _ in 0..3 {
                    rgb.push(clamp_u8(rng.random_range(0.0..BACKGROUND_MAX)));
                }
            }
        }
    }
    Canvas {
        size,
        fg_width,
        rgb,
        texture,
    }
}

/// Semi-axes `(horizontal, vertical)` and intensity offset per class slot.
fn defect_shape(class_idx: usize, rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    match class_idx % 3 {
        0 => (rng.random_range(2.0..4.0), rng.random_range(8.0..12.0), 0.0),
        1 => (rng.random_range(8.0..12.0), rng.random_range(2.0..4.0), 0.0),
        _ => {
            let r = rng.random_range(5.0..8.0);
            (r, r, -30.0)
        }
    }
}

/// Paints one defect and returns its mask.
fn paint_defect(canvas: &mut Canvas, class_idx: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let (ax, ay, offset) = defect_shape(class_idx, rng);
    let size = canvas.size as f64;
    let cx = rng.random_range(ax + 2.0..canvas.fg_width as f64 - ax - 2.0);
    let cy = rng.random_range(ay + 2.0..size - ay - 2.0);
    let noise = Normal::new(0.0, DEFECT_NOISE).expect("valid sigma");
    let mut mask = vec![0u8; (canvas.size * canvas.size) as usize];
    for r in 0..canvas.size {
        for c in 0..canvas.fg_width {
            let (dx, dy) = ((c as f64 + 0.5 - cx) / ax, (r as f64 + 0.5 - cy) / ay);
            if dx * dx + dy * dy <= 1.0 {
                let i = (r * canvas.size + c) as usize;
                mask[i] = 255;
                let v = canvas.texture[i] + offset + noise.sample(rng);
                canvas.rgb[i * 3..i * 3 + 3].copy_from_slice(&tint(v));
            }
        }
    }
    mask
}

fn write_png(path: &Path, patch: &PixelPatch) -> Result<()> {
    write_atomic(path, &patch.encode_png()?)
}

/// Generates the images, masks and a `manifest.json` under `out_dir` and
/// returns the manifest.
pub fn generate(cfg: &SynthConfig, out_dir: &Path) -> Result<AnnotationManifest> {
    if cfg.size < 48 {
        return Err(Error::Validation(format!(
            "synthetic image size {} below 48",
            cfg.size
        )));
    }
    if cfg.classes.is_empty() || cfg.classes.iter().any(|c| c.is_empty() || c == "good") {
        return Err(Error::Validation(
            "synthetic classes must be non-empty and not \"good\"".into(),
        ));
    }
    let obj = &cfg.object_type;
    let size = cfg.size;
    let foreground = BBox::new(0, 0, size * 5 / 8, size);
    let mut records = Vec::new();

    let jobs = cfg
        .classes
        .iter()
        .enumerate()
        .flat_map(|(k, class)| {
            (0..cfg.images_per_class).map(move |i| (k + 1, Some(class.as_str()), i))
        })
        .chain((0..cfg.good_images).map(|i| (0, None, i)));
    for (slot, class, i) in jobs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, slot as u64, i as u64));
        let mut canvas = paint_base(size, &mut rng);
        let dir = class.unwrap_or("good");
        let image_path = format!("{obj}/test/{dir}/{i:03}.png");
        let mut regions = Vec::new();
        if let Some(class) = class {
            let mask = paint_defect(&mut canvas, slot - 1, &mut rng);
            let mask_path = format!("{obj}/ground_truth/{class}/{i:03}_mask.png");
            write_png(
                &out_dir.join(&mask_path),
                &PixelPatch::new(size, size, 1, mask),
            )?;
            regions.push(RegionAnnotation::mask(mask_path, Some(class)));
        }
        write_png(
            &out_dir.join(&image_path),
            &PixelPatch::new(size, size, 3, canvas.rgb),
        )?;
        records.push(ImageRecord {
            image_path,
            object_type: obj.clone(),
            defect_regions: regions,
            foreground_region: Some(RegionAnnotation::bbox(foreground, None)),
        });
    }
    let mut manifest =
        AnnotationManifest::new(&cfg.dataset_name, ".", cfg.classes.clone(), records);
    manifest.validate()?;
    manifest.write(&out_dir.join("manifest.json"))?;
    manifest = crate::corpus::load_manifest(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_determinism() {
        let cfg = SynthConfig {
            images_per_class: 2,
            good_images: 1,
            size: 64,
            ..Default::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = generate(&cfg, a.path()).unwrap();
        generate(&cfg, b.path()).unwrap();
        assert_eq!(m.records.len(), 7);
        for rel in [
            "tile/test/crack/000.png",
            "tile/ground_truth/stain/001_mask.png",
            "manifest.json",
        ] {
            let x = std::fs::read(a.path().join(rel)).unwrap();
            assert_eq!(x, std::fs::read(b.path().join(rel)).unwrap(), "{rel}");
        }
    }

    #[test]
    fn rejects_good_class() {
        let cfg = SynthConfig {
            classes: vec!["good".into()],
            ..Default::default()
        };
        assert!(generate(&cfg, tempfile::tempdir().unwrap().path()).is_err());
    }
}
