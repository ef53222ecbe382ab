use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::geometry::{validate_polygon, BBox};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: &str = "1";

/// Geometry of an annotated region.
#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    /// Path (relative to the manifest root) of a binary mask with the same
    /// dimensions as the image; non-zero pixels are inside.
    Mask {
        path: String,
    },
    BBox(BBox),
    /// `[x, y]` vertices in pixel units; pixel `(row, col)` is inside when its
    /// centre `(col + 0.5, row + 0.5)` is inside under the even-odd rule.
    Polygon {
        points: Vec<[f64; 2]>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRegion", into = "RawRegion")]
pub struct RegionAnnotation {
    pub geometry: Geometry,
    pub anomaly_class: Option<String>,
}

impl RegionAnnotation {
    pub fn bbox(bbox: BBox, anomaly_class: Option<&str>) -> Self {
        Self {
            geometry: Geometry::BBox(bbox),
            anomaly_class: anomaly_class.map(str::to_owned),
        }
    }

    pub fn mask(path: impl Into<String>, anomaly_class: Option<&str>) -> Self {
        Self {
            geometry: Geometry::Mask { path: path.into() },
            anomaly_class: anomaly_class.map(str::to_owned),
        }
    }

    pub fn polygon(points: Vec<[f64; 2]>, anomaly_class: Option<&str>) -> Self {
        Self {
            geometry: Geometry::Polygon { points },
            anomaly_class: anomaly_class.map(str::to_owned),
        }
    }

    pub fn kind(&self) -> RegionKind {
        match self.geometry {
            Geometry::Mask { .. } => RegionKind::MaskPath,
            Geometry::BBox(_) => RegionKind::Bbox,
            Geometry::Polygon { .. } => RegionKind::Polygon,
        }
    }

    fn validate_geometry(&self) -> Result<()> {
        match &self.geometry {
            Geometry::BBox(b) if b.is_degenerate() => Err(Error::Validation(format!(
                "degenerate bbox (width {}, height {})",
                b.width, b.height
            ))),
            Geometry::Polygon { points } => validate_polygon(points),
            Geometry::Mask { path } if path.is_empty() => {
                Err(Error::Validation("empty mask path".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    MaskPath,
    Bbox,
    Polygon,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegion {
    kind: RegionKind,
    payload: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    anomaly_class: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskPayload {
    path: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolygonPayload {
    points: Vec<[f64; 2]>,
}

impl TryFrom<RawRegion> for RegionAnnotation {
    type Error = String;

    fn try_from(raw: RawRegion) -> Result<Self, String> {
        let geometry = match raw.kind {
            RegionKind::MaskPath => {
                let p: MaskPayload =
                    serde_json::from_value(raw.payload).map_err(|e| e.to_string())?;
                Geometry::Mask { path: p.path }
            }
            RegionKind::Bbox => {
                Geometry::BBox(serde_json::from_value(raw.payload).map_err(|e| e.to_string())?)
            }
            RegionKind::Polygon => {
                let p: PolygonPayload =
                    serde_json::from_value(raw.payload).map_err(|e| e.to_string())?;
                Geometry::Polygon { points: p.points }
            }
        };
        Ok(Self {
            geometry,
            anomaly_class: raw.anomaly_class,
        })
    }
}

impl From<RegionAnnotation> for RawRegion {
    fn from(r: RegionAnnotation) -> Self {
        let kind = r.kind();
        let payload = match r.geometry {
            Geometry::Mask { path } => serde_json::to_value(MaskPayload { path }),
            Geometry::BBox(b) => serde_json::to_value(b),
            Geometry::Polygon { points } => serde_json::to_value(PolygonPayload { points }),
        }
        .expect("geometry serializes");
        Self {
            kind,
            payload,
            anomaly_class: r.anomaly_class,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub image_path: String,
    pub object_type: String,
    #[serde(default)]
    pub defect_regions: Vec<RegionAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub foreground_region: Option<RegionAnnotation>,
}

impl ImageRecord {
    /// Identifier derived from the image path: extension dropped, path
    /// separators and whitespace replaced by `-`.
    pub fn image_id(&self) -> String {
        let p = Path::new(&self.image_path);
        let stem = p.with_extension("");
        stem.to_string_lossy()
            .chars()
            .map(|c| match c {
                '/' | '\\' | ' ' | '\t' => '-',
                c => c,
            })
            .collect::<String>()
            .trim_start_matches(['.', '-'])
            .to_string()
    }
}

/// Annotated image collection for one dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationManifest {
    pub schema_version: String,
    pub dataset_name: String,
    /// Directory that image and mask paths are relative to. A relative root
    /// is resolved against the manifest file's directory.
    pub root: String,
    /// Declared anomaly classes.
    pub classes: Vec<String>,
    pub records: Vec<ImageRecord>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl PartialEq for AnnotationManifest {
    fn eq(&self, other: &Self) -> bool {
        self.schema_version == other.schema_version
            && self.dataset_name == other.dataset_name
            && self.root == other.root
            && self.classes == other.classes
            && self.records == other.records
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    schema_version: String,
    dataset_name: String,
    root: String,
    classes: Vec<String>,
    records: Vec<serde_json::Value>,
}

impl AnnotationManifest {
    pub fn new(
        dataset_name: impl Into<String>,
        root: impl Into<String>,
        classes: Vec<String>,
        records: Vec<ImageRecord>,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.into(),
            dataset_name: dataset_name.into(),
            root: root.into(),
            classes,
            records,
            base_dir: PathBuf::new(),
        }
    }

    /// Parses a manifest from JSON text. Relative roots resolve against
    /// `base_dir`. Does not touch the filesystem.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawManifest =
            serde_json::from_str(text).map_err(|e| Error::json("manifest", e))?;
        if raw.schema_version != SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "unsupported schema_version {:?} (expected {SCHEMA_VERSION:?})",
                raw.schema_version
            )));
        }
        let records = raw
            .records
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                serde_json::from_value::<ImageRecord>(v)
                    .map_err(|e| Error::json(format!("manifest record {i}"), e))
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = Self {
            schema_version: raw.schema_version,
            dataset_name: raw.dataset_name,
            root: raw.root,
            classes: raw.classes,
            records,
            base_dir: base_dir.to_path_buf(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("manifest", e))
    }

    pub fn root_dir(&self) -> PathBuf {
        let root = Path::new(&self.root);
        if root.is_absolute() {
            root.to_path_buf()
        } else {
            self.base_dir.join(root)
        }
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root_dir().join(relative)
    }

    /// Checks the structural invariants (no filesystem access).
    pub fn validate(&self) -> Result<()> {
        let classes: BTreeSet<&str> = self.classes.iter().map(String::as_str).collect();
        let mut ids = BTreeSet::new();
        for (i, rec) in self.records.iter().enumerate() {
            let ctx = |msg: String| {
                Error::Validation(format!("manifest record {i} ({}): {msg}", rec.image_path))
            };
            if rec.image_path.is_empty() {
                return Err(ctx("empty image_path".into()));
            }
            if Path::new(&rec.image_path).is_absolute() {
                return Err(ctx("image_path must be relative to root".into()));
            }
            if !ids.insert(rec.image_id()) {
                return Err(ctx(format!("duplicate image id {:?}", rec.image_id())));
            }
            for region in &rec.defect_regions {
                region.validate_geometry().map_err(|e| ctx(e.to_string()))?;
                match region.anomaly_class.as_deref() {
                    None => return Err(ctx("defect region without anomaly_class".into())),
                    Some(c) if !classes.contains(c) => {
                        return Err(ctx(format!("anomaly_class {c:?} not in declared classes")))
                    }
                    _ => {}
                }
            }
            if let Some(fg) = &rec.foreground_region {
                fg.validate_geometry()
                    .map_err(|e| ctx(format!("foreground: {e}")))?;
                if fg.anomaly_class.is_some() {
                    return Err(ctx("foreground region must not carry anomaly_class".into()));
                }
            }
        }
        Ok(())
    }

    /// Checks that every image and mask exists and that mask dimensions
    /// match their image.
    pub fn check_files(&self) -> Result<()> {
        for rec in &self.records {
            let img_path = self.resolve(&rec.image_path);
            let dims = image::image_dimensions(&img_path).map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(&img_path, io),
                other => Error::image(&img_path, other),
            })?;
            let regions = rec
                .defect_regions
                .iter()
                .chain(rec.foreground_region.as_ref());
            for region in regions {
                if let Geometry::Mask { path } = &region.geometry {
                    let mpath = self.resolve(path);
                    let mdims = image::image_dimensions(&mpath).map_err(|e| match e {
                        image::ImageError::IoError(io) => Error::io(&mpath, io),
                        other => Error::image(&mpath, other),
                    })?;
                    if mdims != dims {
                        return Err(Error::Validation(format!(
                            "{}: mask size {}x{} differs from image size {}x{}",
                            mpath.display(),
                            mdims.0,
                            mdims.1,
                            dims.0,
                            dims.1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        crate::util::write_atomic(path, text.as_bytes())
    }
}

/// Loads, validates and file-checks a manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<AnnotationManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let manifest = AnnotationManifest::from_json(&text, base)?;
    manifest.check_files()?;
    Ok(manifest)
}
