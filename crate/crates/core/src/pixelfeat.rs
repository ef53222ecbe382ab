//! A fixed, training-free embedding of normalized crops: block means and
//! block standard deviations of luma on a square grid, followed by the
//! global mean and standard deviation of each colour channel.
//!
//! It stands in for a pretrained backbone so the measurement pipeline can
//! run end to end without external model weights.

use crate::corpus::PixelPatch;
use crate::error::{Error, Result};
use crate::featstore::{BackboneMeta, FeatureMatrix};

pub const BACKBONE_NAME: &str = "pixelgrid";
pub const DEFAULT_GRID: usize = 8;

/// Feature dimension for a given grid size.
pub fn feature_dim(grid: usize) -> usize {
    2 * grid * grid + 6
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
    for v in values {
        n += 1.0;
        s += v;
        s2 += v * v;
    }
    let m = s / n;
    (m, (s2 / n - m * m).max(0.0).sqrt())
}

/// Embeds one patch. Grey patches repeat their single channel in the
/// colour statistics.
pub fn embed_patch(patch: &PixelPatch, grid: usize) -> Result<Vec<f32>> {
    let (h, w) = (patch.height as usize, patch.width as usize);
    if grid == 0 || grid > h.min(w) {
        return Err(Error::Validation(format!(
            "grid {grid} does not fit a {h}x{w} patch"
        )));
    }
    let luma = patch.luma();
    let mut means = Vec::with_capacity(grid * grid);
    let mut stds = Vec::with_capacity(grid * grid);
    for by in 0..grid {
        let (r0, r1) = (by * h / grid, (by + 1) * h / grid);
        for bx in 0..grid {
            let (c0, c1) = (bx * w / grid, (bx + 1) * w / grid);
            let (m, s) = mean_std(
                (r0..r1)
                    .flat_map(|r| (c0..c1).map(move |c| (r, c)))
                    .map(|(r, c)| luma[r * w + c]),
            );
            means.push(m as f32);
            stds.push(s as f32);
        }
    }
    let ch = patch.channels as usize;
    let mut out = means;
    out.extend(stds);
    for k in 0..3 {
        let k = k.min(ch - 1);
        let (m, s) = mean_std(
            patch
                .pixels
                .iter()
                .skip(k)
                .step_by(ch)
                .map(|&v| f64::from(v) / 255.0),
        );
        out.push(m as f32);
        out.push(s as f32);
    }
    Ok(out)
}

/// Embeds every patch into one matrix with the given sample ids.
pub fn embed_patches(
    patches: &[&PixelPatch],
    ids: Vec<String>,
    grid: usize,
    meta: BackboneMeta,
) -> Result<FeatureMatrix> {
    if patches.is_empty() {
        return Err(Error::Validation("no patches to embed".into()));
    }
    let p = feature_dim(grid);
    let mut values = Vec::with_capacity(patches.len() * p);
    for patch in patches {
        values.extend(embed_patch(patch, grid)?);
    }
    FeatureMatrix::new(patches.len(), p, values, meta, ids)
}
