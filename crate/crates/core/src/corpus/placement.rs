use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::geometry::{mask_bbox, polygon_bbox, rasterize_polygon, BBox};
use super::manifest::{Geometry, ImageRecord, RegionAnnotation};
use crate::error::{Error, Result};

/// Attempts per phase of the rejection sampler.
pub const PLACEMENT_ATTEMPTS: usize = 1000;
/// IoU ceiling accepted once zero-overlap placement has failed.
pub const RELAXED_MAX_IOU: f64 = 0.10;

/// A region annotation resolved against a concrete image.
#[derive(Debug, Clone)]
pub struct ResolvedRegion {
    pub bbox: BBox,
    coverage: Coverage,
}

#[derive(Debug, Clone)]
enum Coverage {
    Rect,
    Raster { width: u32, mask: Vec<u8> },
}

impl ResolvedRegion {
    pub fn covers(&self, row: u32, col: u32) -> bool {
        match &self.coverage {
            Coverage::Rect => self.bbox.contains_pixel(row, col),
            Coverage::Raster { width, mask } => {
                col < *width
                    && mask
                        .get(row as usize * *width as usize + col as usize)
                        .is_some_and(|&v| v != 0)
            }
        }
    }
}

fn load_mask(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let img = image::open(path)
        .map_err(|e| Error::image(path, e))?
        .to_luma8();
    Ok((img.width(), img.height(), img.into_raw()))
}

/// Tightest axis-aligned box around an annotation. Mask paths resolve
/// against `root`.
pub fn best_fit_bbox(annotation: &RegionAnnotation, root: &Path) -> Result<BBox> {
    match &annotation.geometry {
        Geometry::BBox(b) => Ok(*b),
        Geometry::Polygon { points } => polygon_bbox(points),
        Geometry::Mask { path } => {
            let (w, h, mask) = load_mask(&root.join(path))?;
            mask_bbox(&mask, w, h)
        }
    }
}

/// Resolves an annotation on a `width`×`height` image; the resulting box is
/// clipped to the image.
pub fn resolve_region(
    annotation: &RegionAnnotation,
    root: &Path,
    width: u32,
    height: u32,
) -> Result<ResolvedRegion> {
    let (bbox, coverage) = match &annotation.geometry {
        Geometry::BBox(b) => (*b, Coverage::Rect),
        Geometry::Polygon { points } => {
            let bbox = polygon_bbox(points)?;
            let mask = rasterize_polygon(points, width, height);
            (bbox, Coverage::Raster { width, mask })
        }
        Geometry::Mask { path } => {
            let mpath = root.join(path);
            let (w, h, mask) = load_mask(&mpath)?;
            if (w, h) != (width, height) {
                return Err(Error::Validation(format!(
                    "{}: mask size {w}x{h} differs from image size {width}x{height}",
                    mpath.display()
                )));
            }
            (mask_bbox(&mask, w, h)?, Coverage::Raster { width, mask })
        }
    };
    let bbox = bbox
        .clip_to(width, height)
        .ok_or_else(|| Error::Validation("annotation lies outside the image".into()))?;
    Ok(ResolvedRegion { bbox, coverage })
}

/// Outcome of a seeded placement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub bbox: BBox,
    /// True when the zero-overlap phase failed and the IoU ≤ 0.10 phase
    /// produced the box.
    pub relaxed: bool,
    /// Largest IoU with any defect box of the image.
    pub max_iou: f64,
}

/// Everything about one image that crop placement depends on.
#[derive(Debug, Clone)]
pub struct PlacementContext {
    width: u32,
    height: u32,
    /// Summed-area table of the foreground indicator, `(h+1)×(w+1)`.
    fg_integral: Vec<u32>,
    fg_bbox: Option<BBox>,
    defect_boxes: Vec<BBox>,
}

impl PlacementContext {
    /// `foreground` of `None` means the whole image is foreground.
    pub fn new(
        width: u32,
        height: u32,
        foreground: Option<&ResolvedRegion>,
        defect_boxes: Vec<BBox>,
    ) -> Self {
        let (w, h) = (width as usize, height as usize);
        let mut fg_integral = vec![0u32; (w + 1) * (h + 1)];
        let mut fg_bbox: Option<(u32, u32, u32, u32)> = None;
        for r in 0..h {
            let mut row_sum = 0u32;
            for c in 0..w {
                let inside = foreground.is_none_or(|fg| fg.covers(r as u32, c as u32));
                if inside {
                    row_sum += 1;
                    let (r, c) = (r as u32, c as u32);
                    fg_bbox = Some(match fg_bbox {
                        None => (r, r, c, c),
                        Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r), c0.min(c), c1.max(c)),
                    });
                }
                fg_integral[(r + 1) * (w + 1) + c + 1] = fg_integral[r * (w + 1) + c + 1] + row_sum;
            }
        }
        Self {
            width,
            height,
            fg_integral,
            fg_bbox: fg_bbox.map(|(r0, r1, c0, c1)| BBox::from_inclusive((r0, r1), (c0, c1))),
            defect_boxes,
        }
    }

    /// Builds the context for `record`, resolving its foreground and defect
    /// regions. Unresolvable defect regions are ignored here; they are
    /// reported by the caller.
    pub fn from_record(record: &ImageRecord, root: &Path, width: u32, height: u32) -> Result<Self> {
        let fg = record
            .foreground_region
            .as_ref()
            .map(|r| resolve_region(r, root, width, height))
            .transpose()?;
        let boxes = record
            .defect_regions
            .iter()
            .filter_map(|r| resolve_region(r, root, width, height).ok())
            .map(|r| r.bbox)
            .collect();
        Ok(Self::new(width, height, fg.as_ref(), boxes))
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    fn fg_count(&self, b: &BBox) -> u32 {
        let w1 = self.width as usize + 1;
        let at = |r: u32, c: u32| self.fg_integral[r as usize * w1 + c as usize];
        at(b.bottom(), b.right()) + at(b.y, b.x) - at(b.y, b.right()) - at(b.bottom(), b.x)
    }

    fn fg_total(&self) -> u32 {
        *self.fg_integral.last().unwrap_or(&0)
    }

    fn max_iou(&self, cand: &BBox, extra: &BBox) -> (u64, f64) {
        std::iter::once(extra)
            .chain(&self.defect_boxes)
            .fold((0, 0.0), |(ov, iou), d| {
                (
                    ov.max(cand.intersection_area(d)),
                    f64::max(iou, cand.iou(d)),
                )
            })
    }

    fn sample(
        &self,
        size: (u32, u32),
        region: BBox,
        defect_bbox: &BBox,
        seed: u64,
        accept: impl Fn(&BBox) -> bool,
    ) -> Result<Placement> {
        let (bh, bw) = size;
        if region.width < bw || region.height < bh {
            return Err(Error::Validation("no anomaly-free placement".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for relaxed in [false, true] {
            for _ in 0..PLACEMENT_ATTEMPTS {
                let x = rng.random_range(region.x..=region.right() - bw);
                let y = rng.random_range(region.y..=region.bottom() - bh);
                let cand = BBox::new(x, y, bw, bh);
                if !accept(&cand) {
                    continue;
                }
                let (overlap, max_iou) = self.max_iou(&cand, defect_bbox);
                if (!relaxed && overlap == 0) || (relaxed && max_iou <= RELAXED_MAX_IOU) {
                    return Ok(Placement {
                        bbox: cand,
                        relaxed,
                        max_iou,
                    });
                }
            }
        }
        Err(Error::Validation("no anomaly-free placement".into()))
    }

    /// Same-size box inside the foreground, disjoint from every defect box
    /// (or with IoU ≤ 0.10 after the fallback).
    pub fn paired_fg_crop(&self, defect_bbox: &BBox, seed: u64) -> Result<Placement> {
        let region = self
            .fg_bbox
            .ok_or_else(|| Error::Validation("no anomaly-free placement".into()))?;
        let area = defect_bbox.area() as u32;
        self.sample(
            (defect_bbox.height, defect_bbox.width),
            region,
            defect_bbox,
            seed,
            |b| self.fg_count(b) == area,
        )
    }

    /// Same-size box entirely outside the foreground.
    pub fn paired_bg_crop(&self, defect_bbox: &BBox, seed: u64) -> Result<Placement> {
        if self.fg_total() as u64 == self.width as u64 * self.height as u64 {
            return Err(Error::Validation("no background available".into()));
        }
        let image = BBox::new(0, 0, self.width, self.height);
        self.sample(
            (defect_bbox.height, defect_bbox.width),
            image,
            defect_bbox,
            seed,
            |b| self.fg_count(b) == 0,
        )
    }
}

/// Seeded same-size anomaly-free foreground box for `defect_bbox`.
pub fn paired_fg_crop(
    record: &ImageRecord,
    root: &Path,
    image_size: (u32, u32),
    defect_bbox: &BBox,
    seed: u64,
) -> Result<Placement> {
    PlacementContext::from_record(record, root, image_size.0, image_size.1)?
        .paired_fg_crop(defect_bbox, seed)
}

/// Seeded same-size background box for `defect_bbox`.
pub fn paired_bg_crop(
    record: &ImageRecord,
    root: &Path,
    image_size: (u32, u32),
    defect_bbox: &BBox,
    seed: u64,
) -> Result<Placement> {
    PlacementContext::from_record(record, root, image_size.0, image_size.1)?
        .paired_bg_crop(defect_bbox, seed)
}
