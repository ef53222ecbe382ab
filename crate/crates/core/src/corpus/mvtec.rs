use std::fs;
use std::path::{Path, PathBuf};

use super::manifest::{AnnotationManifest, ImageRecord, RegionAnnotation};
use crate::error::{Error, Result};

const GOOD_CLASS: &str = "good";

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

fn is_image(p: &Path) -> bool {
    p.is_file()
        && p.extension().and_then(|e| e.to_str()).is_some_and(|e| {
            matches!(
                e.to_ascii_lowercase().as_str(),
                "png" | "jpg" | "jpeg" | "bmp"
            )
        })
}

fn rel(root: &Path, p: &Path) -> String {
    p.strip_prefix(root)
        .unwrap_or(p)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Converts one object category of an MVTec-AD style tree into a manifest.
///
/// Expected layout under `root/<object_type>/`:
/// `test/<class>/<name>.png` and `ground_truth/<class>/<name>_mask.png`.
/// Images of class `good` (and images without a mask) become records with
/// no defect regions. No foreground mask exists, so the whole image is
/// foreground.
pub fn adapt_mvtec(root: impl AsRef<Path>, object_type: &str) -> Result<AnnotationManifest> {
    let root = root.as_ref();
    let object_dir = root.join(object_type);
    let test_dir = object_dir.join("test");
    let gt_dir = object_dir.join("ground_truth");
    if !test_dir.is_dir() || !gt_dir.is_dir() {
        let found = if object_dir.is_dir() {
            sorted_entries(&object_dir)?
                .iter()
                .map(|p| rel(root, p))
                .collect::<Vec<_>>()
                .join(", ")
        } else {
            "nothing".to_string()
        };
        return Err(Error::Validation(format!(
            "MVTec layout mismatch: expected {} and {}, found [{found}]",
            test_dir.display(),
            gt_dir.display()
        )));
    }

    let mut classes = Vec::new();
    let mut records = Vec::new();
    for class_dir in sorted_entries(&test_dir)?
        .into_iter()
        .filter(|p| p.is_dir())
    {
        let class = class_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let is_good = class == GOOD_CLASS;
        if !is_good {
            classes.push(class.clone());
        }
        for img in sorted_entries(&class_dir)?
            .into_iter()
            .filter(|p| is_image(p))
        {
            let mut defect_regions = Vec::new();
            if !is_good {
                let stem = img.file_stem().unwrap_or_default().to_string_lossy();
                let mask = gt_dir.join(&class).join(format!("{stem}_mask.png"));
                if mask.is_file() {
                    let idims = image::image_dimensions(&img).map_err(|e| Error::image(&img, e))?;
                    let mdims =
                        image::image_dimensions(&mask).map_err(|e| Error::image(&mask, e))?;
                    if idims != mdims {
                        return Err(Error::Validation(format!(
                            "{}: mask size {}x{} differs from image size {}x{}",
                            mask.display(),
                            mdims.0,
                            mdims.1,
                            idims.0,
                            idims.1
                        )));
                    }
                    defect_regions.push(RegionAnnotation::mask(rel(root, &mask), Some(&class)));
                }
            }
            records.push(ImageRecord {
                image_path: rel(root, &img),
                object_type: object_type.to_string(),
                defect_regions,
                foreground_region: None,
            });
        }
    }
    let manifest = AnnotationManifest::new(
        "mvtec",
        root.to_string_lossy().into_owned(),
        classes,
        records,
    );
    manifest.validate()?;
    Ok(manifest)
}
