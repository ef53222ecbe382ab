//! Paired crop preparation.
//!
//! Every annotated defect region yields a [`CropPair`]: the best-fit crop of
//! the defect, a same-size crop at a seeded random anomaly-free location in
//! the object foreground of the same image and, when the image declares a
//! foreground, a same-size background crop. All crops are normalized onto a
//! black square canvas.

mod geometry;
mod manifest;
mod mvtec;
mod patch;
mod placement;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use geometry::{mask_bbox, polygon_bbox, rasterize_polygon, validate_polygon, BBox};
pub use manifest::{
    load_manifest, AnnotationManifest, Geometry, ImageRecord, RegionAnnotation, RegionKind,
    SCHEMA_VERSION,
};
pub use mvtec::adapt_mvtec;
pub use patch::{fitted_size, normalize_patch, PixelPatch};
pub use placement::{
    best_fit_bbox, paired_bg_crop, paired_fg_crop, resolve_region, Placement, PlacementContext,
    ResolvedRegion, PLACEMENT_ATTEMPTS, RELAXED_MAX_IOU,
};

use crate::error::{Error, Result};
use crate::util::{mix_seed, to_json_bytes, write_atomic};

/// A defect crop with its same-image companions.
#[derive(Debug, Clone, PartialEq)]
pub struct CropPair {
    pub defect_crop: PixelPatch,
    pub normal_fg_crop: PixelPatch,
    pub background_crop: Option<PixelPatch>,
    pub dataset: String,
    pub source_image_id: String,
    pub source_image_path: String,
    pub anomaly_class: String,
    pub object_type: String,
    /// Index of the defect region within its image.
    pub index: usize,
    /// `(height, width)` shared by all crop boxes.
    pub box_size: (u32, u32),
    pub seed_used: u64,
    pub defect_bbox: BBox,
    pub fg_placement: Placement,
    pub bg_placement: Option<Placement>,
}

impl CropPair {
    /// Sample id shared by the defect and normal rows of this pair.
    pub fn id(&self) -> String {
        format!(
            "{}_{}_{}",
            self.source_image_id, self.anomaly_class, self.index
        )
    }

    pub fn group_key(&self) -> GroupKey {
        GroupKey {
            dataset: self.dataset.clone(),
            object_type: self.object_type.clone(),
            anomaly_class: self.anomaly_class.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub dataset: String,
    pub object_type: String,
    pub anomaly_class: String,
}

/// A defect region that produced no pair (or lost its background crop).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub image_id: String,
    pub index: usize,
    pub anomaly_class: String,
    pub reason: String,
    /// False when only the background companion was dropped.
    pub pair_dropped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropSetOutput {
    /// Pairs ordered by group key, then manifest order.
    pub pairs: Vec<CropPair>,
    pub skips: Vec<SkipEntry>,
}

impl CropSetOutput {
    pub fn groups(&self) -> BTreeMap<GroupKey, Vec<&CropPair>> {
        let mut out: BTreeMap<GroupKey, Vec<&CropPair>> = BTreeMap::new();
        for p in &self.pairs {
            out.entry(p.group_key()).or_default().push(p);
        }
        out
    }
}

fn process_record(
    manifest: &AnnotationManifest,
    rec_idx: usize,
    record: &ImageRecord,
    target: u32,
    seed: u64,
) -> (Vec<CropPair>, Vec<SkipEntry>) {
    let image_id = record.image_id();
    let mut pairs = Vec::new();
    let mut skips = Vec::new();
    let skip_all = |reason: String, skips: &mut Vec<SkipEntry>| {
        for (i, r) in record.defect_regions.iter().enumerate() {
            skips.push(SkipEntry {
                image_id: image_id.clone(),
                index: i,
                anomaly_class: r.anomaly_class.clone().unwrap_or_default(),
                reason: reason.clone(),
                pair_dropped: true,
            });
        }
    };
    if record.defect_regions.is_empty() {
        return (pairs, skips);
    }
    let path = manifest.resolve(&record.image_path);
    let image = match PixelPatch::load(&path) {
        Ok(img) => img,
        Err(e) => {
            skip_all(e.to_string(), &mut skips);
            return (pairs, skips);
        }
    };
    let root = manifest.root_dir();
    let (w, h) = (image.width, image.height);
    let regions: Vec<Result<ResolvedRegion>> = record
        .defect_regions
        .iter()
        .map(|r| resolve_region(r, &root, w, h))
        .collect();
    let ctx = match PlacementContext::from_record(record, &root, w, h) {
        Ok(ctx) => ctx,
        Err(e) => {
            skip_all(format!("foreground: {e}"), &mut skips);
            return (pairs, skips);
        }
    };
    let has_fg = record.foreground_region.is_some();
    let prepare = |p: &PixelPatch| normalize_patch(p, target);

    for (idx, (annotation, resolved)) in record.defect_regions.iter().zip(&regions).enumerate() {
        let class = annotation.anomaly_class.clone().unwrap_or_default();
        let mut skip = |reason: String, pair_dropped: bool| {
            skips.push(SkipEntry {
                image_id: image_id.clone(),
                index: idx,
                anomaly_class: class.clone(),
                reason,
                pair_dropped,
            })
        };
        let own = match resolved {
            Ok(r) => r,
            Err(e) => {
                skip(e.to_string(), true);
                continue;
            }
        };
        let seed_used = mix_seed(seed, rec_idx as u64, idx as u64);
        let fg = match ctx.paired_fg_crop(&own.bbox, seed_used) {
            Ok(p) => p,
            Err(e) => {
                skip(e.to_string(), true);
                continue;
            }
        };
        let bg = if has_fg {
            match ctx.paired_bg_crop(&own.bbox, mix_seed(seed_used, 1, 0)) {
                Ok(p) => Some(p),
                Err(e) => {
                    skip(format!("background: {e}"), false);
                    None
                }
            }
        } else {
            None
        };

        // Purity: pixels of other annotated defects are blanked.
        let mut defect = image.crop(&own.bbox);
        let (ox, oy) = (own.bbox.x, own.bbox.y);
        defect.blank_where(|r, c| {
            let (r, c) = (r + oy, c + ox);
            !own.covers(r, c)
                && regions
                    .iter()
                    .enumerate()
                    .any(|(j, o)| j != idx && o.as_ref().is_ok_and(|o| o.covers(r, c)))
        });

        let result = (|| -> Result<CropPair> {
            Ok(CropPair {
                defect_crop: prepare(&defect)?,
                normal_fg_crop: prepare(&image.crop(&fg.bbox))?,
                background_crop: bg.map(|b| prepare(&image.crop(&b.bbox))).transpose()?,
                dataset: manifest.dataset_name.clone(),
                source_image_id: image_id.clone(),
                source_image_path: record.image_path.clone(),
                anomaly_class: class.clone(),
                object_type: record.object_type.clone(),
                index: idx,
                box_size: (own.bbox.height, own.bbox.width),
                seed_used,
                defect_bbox: own.bbox,
                fg_placement: fg,
                bg_placement: bg,
            })
        })();
        match result {
            Ok(pair) => pairs.push(pair),
            Err(e) => skip(e.to_string(), true),
        }
    }
    (pairs, skips)
}

/// Builds one [`CropPair`] per defect region of `manifest`.
///
/// Placement failures are collected into the skip list; the call fails only
/// when no pair at all could be produced.
pub fn build_crop_sets(
    manifest: &AnnotationManifest,
    target: u32,
    seed: u64,
) -> Result<CropSetOutput> {
    if target < 8 {
        return Err(Error::Validation(format!(
            "target size {target} below minimum 8"
        )));
    }
    let per_record: Vec<(Vec<CropPair>, Vec<SkipEntry>)> = manifest
        .records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| process_record(manifest, i, rec, target, seed))
        .collect();
    let mut pairs = Vec::new();
    let mut skips = Vec::new();
    for (p, s) in per_record {
        pairs.extend(p);
        skips.extend(s);
    }
    if pairs.is_empty() {
        return Err(Error::Validation(format!(
            "no crop pairs produced ({} regions skipped)",
            skips.len()
        )));
    }
    pairs.sort_by_key(CropPair::group_key);
    Ok(CropSetOutput { pairs, skips })
}

/// One line of `pairs.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub id: String,
    pub dataset: String,
    pub image_id: String,
    pub image_path: String,
    pub object_type: String,
    pub anomaly_class: String,
    pub index: usize,
    pub seed_used: u64,
    /// `[height, width]`
    pub box_size: [u32; 2],
    pub defect_bbox: BBox,
    pub fg_bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bg_bbox: Option<BBox>,
    /// Set when the IoU ≤ 0.10 fallback produced the foreground box.
    pub relaxed: bool,
    pub fg_max_iou: f64,
    pub defect: String,
    pub fg: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bg: Option<String>,
}

/// Contents of `pairs.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsIndex {
    pub dataset: String,
    pub target_size: u32,
    pub seed: u64,
    pub pairs: Vec<PairEntry>,
    pub skipped: Vec<SkipEntry>,
}

impl PairsIndex {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

fn crop_file_name(id: &str, kind: &str) -> String {
    format!("{id}_{kind}.png")
}

/// Writes one PNG per crop plus `pairs.json` into `out_dir`.
pub fn write_crop_sets(
    output: &CropSetOutput,
    out_dir: &Path,
    target: u32,
    seed: u64,
) -> Result<PairsIndex> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries = output
        .pairs
        .par_iter()
        .map(|p| {
            let id = p.id();
            let write = |kind: &str, patch: &PixelPatch| -> Result<String> {
                let name = crop_file_name(&id, kind);
                write_atomic(&out_dir.join(&name), &patch.encode_png()?)?;
                Ok(name)
            };
            let defect = write("defect", &p.defect_crop)?;
            let fg = write("fg", &p.normal_fg_crop)?;
            let bg = p
                .background_crop
                .as_ref()
                .map(|b| write("bg", b))
                .transpose()?;
            Ok(PairEntry {
                id,
                dataset: p.dataset.clone(),
                image_id: p.source_image_id.clone(),
                image_path: p.source_image_path.clone(),
                object_type: p.object_type.clone(),
                anomaly_class: p.anomaly_class.clone(),
                index: p.index,
                seed_used: p.seed_used,
                box_size: [p.box_size.0, p.box_size.1],
                defect_bbox: p.defect_bbox,
                fg_bbox: p.fg_placement.bbox,
                bg_bbox: p.bg_placement.map(|b| b.bbox),
                relaxed: p.fg_placement.relaxed,
                fg_max_iou: p.fg_placement.max_iou,
                defect,
                fg,
                bg,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let index = PairsIndex {
        dataset: output
            .pairs
            .first()
            .map(|p| p.dataset.clone())
            .unwrap_or_default(),
        target_size: target,
        seed,
        pairs: entries,
        skipped: output.skips.clone(),
    };
    write_atomic(&out_dir.join("pairs.json"), &to_json_bytes(&index)?)?;
    Ok(index)
}
