//! FGAP feature-matrix files.
//!
//! Layout (all integers and floats little-endian):
//!
//! | bytes      | content                          |
//! |------------|----------------------------------|
//! | 0..8       | ASCII `FGAPv001`                 |
//! | 8..12      | `u32` row count `n`              |
//! | 12..16     | `u32` feature dimension `p`      |
//! | 16..       | `n·p` IEEE-754 `f32`, row-major  |
//!
//! Provenance lives in a JSON sidecar `<file>.meta.json` holding the
//! [`BackboneMeta`] fields plus a `sample_ids` array.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{to_json_bytes, write_atomic};

pub const MAGIC: &[u8; 8] = b"FGAPv001";
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Defect,
    NormalFg,
    Background,
}

impl SampleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SampleKind::Defect => "defect",
            SampleKind::NormalFg => "normal_fg",
            SampleKind::Background => "background",
        }
    }
}

impl fmt::Display for SampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a feature matrix came from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneMeta {
    #[serde(default)]
    pub backbone_name: String,
    #[serde(default)]
    pub pretrain_dataset: String,
    #[serde(default)]
    pub dataset: String,
    #[serde(default)]
    pub object_type: String,
    #[serde(default)]
    pub anomaly_class: String,
    /// `None` only when the sidecar was missing.
    #[serde(default)]
    pub kind: Option<SampleKind>,
    #[serde(default)]
    pub layer_tag: String,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    #[serde(flatten)]
    meta: BackboneMeta,
    sample_ids: Vec<String>,
}

/// `n` embedding vectors of dimension `p`, stored row-major as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    p: usize,
    values: Vec<f32>,
    pub meta: BackboneMeta,
    sample_ids: Vec<String>,
}

impl FeatureMatrix {
    /// Builds a matrix after checking every invariant.
    pub fn new(
        n: usize,
        p: usize,
        values: Vec<f32>,
        meta: BackboneMeta,
        sample_ids: Vec<String>,
    ) -> Result<Self> {
        let m = Self {
            n,
            p,
            values,
            meta,
            sample_ids,
        };
        m.validate()?;
        Ok(m)
    }

    /// Matrix from rows with ids `"0".."n-1"` and empty metadata.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::new(rows.len(), p, rows.concat(), BackboneMeta::default(), ids)
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        self.sample_ids = ids;
        self.validate()?;
        Ok(self)
    }

    pub fn with_meta(mut self, meta: BackboneMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::Validation(format!(
                "feature matrix must be non-empty (n={}, p={})",
                self.n, self.p
            )));
        }
        if self.n > u32::MAX as usize || self.p > u32::MAX as usize {
            return Err(Error::Validation(
                "feature matrix too large for FGAP".into(),
            ));
        }
        if self.values.len() != self.n * self.p {
            return Err(Error::Dimension(format!(
                "{} values for {}x{} matrix",
                self.values.len(),
                self.n,
                self.p
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {} at row {}, column {}",
                self.values[i],
                i / self.p,
                i % self.p
            )));
        }
        if self.sample_ids.len() != self.n {
            return Err(Error::Validation(format!(
                "{} sample ids for {} rows",
                self.sample_ids.len(),
                self.n
            )));
        }
        let mut seen = HashSet::with_capacity(self.n);
        if let Some(dup) = self.sample_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Validation(format!("duplicate sample id {dup:?}")));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.p)
    }

    /// Row `i` widened to `f64`.
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(self.n, self.p, self.values.iter().map(|&v| v as f64))
    }

    /// New matrix with rows taken in `order`.
    pub fn select_rows(&self, order: &[usize]) -> Self {
        let mut values = Vec::with_capacity(order.len() * self.p);
        for &i in order {
            values.extend_from_slice(self.row(i));
        }
        Self {
            n: order.len(),
            p: self.p,
            values,
            meta: self.meta.clone(),
            sample_ids: order.iter().map(|&i| self.sample_ids[i].clone()).collect(),
        }
    }

    /// The FGAP byte encoding of this matrix.
    pub fn to_fgap_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * self.values.len());
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(self.n as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.p as u32).to_le_bytes());
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes
    }

    /// Decodes FGAP bytes; ids default to row indices and meta is empty.
    pub fn from_fgap_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Validation("not an FGAP file (bad magic)".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Validation(format!(
                "truncated FGAP header: expected {HEADER_LEN} bytes, found {}",
                bytes.len()
            )));
        }
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let p = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let expected = (n as u64 * p as u64)
            .checked_mul(4)
            .and_then(|v| v.checked_add(HEADER_LEN as u64))
            .ok_or_else(|| Error::Validation("FGAP dimensions overflow".into()))?;
        if bytes.len() as u64 != expected {
            return Err(Error::Validation(format!(
                "FGAP payload for {n}x{p}: expected {expected} bytes, found {}",
                bytes.len()
            )));
        }
        let values = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let ids = (0..n).map(|i| i.to_string()).collect();
        Self::new(n, p, values, BackboneMeta::default(), ids)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes the FGAP file and its sidecar. Nothing is written if the matrix
/// fails validation.
pub fn write_features(matrix: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    matrix.validate()?;
    let sidecar = Sidecar {
        meta: matrix.meta.clone(),
        sample_ids: matrix.sample_ids.clone(),
    };
    write_atomic(path, &matrix.to_fgap_bytes())?;
    write_atomic(&sidecar_path(path), &to_json_bytes(&sidecar)?)
}

/// Reads an FGAP file. A missing sidecar is logged and leaves metadata
/// empty with row-index sample ids.
pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut m = FeatureMatrix::from_fgap_bytes(&bytes)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    let side = sidecar_path(path);
    match std::fs::read_to_string(&side) {
        Ok(text) => {
            let sc: Sidecar = serde_json::from_str(&text)
                .map_err(|e| Error::json(side.display().to_string(), e))?;
            m.meta = sc.meta;
            m.sample_ids = sc.sample_ids;
            m.validate()
                .map_err(|e| Error::Validation(format!("{}: {e}", side.display())))?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            log::warn!("{}: sidecar missing, metadata left empty", side.display());
        }
        Err(e) => return Err(Error::io(side, e)),
    }
    Ok(m)
}

/// Defect and normal rows aligned pair by pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedFeatures {
    pub defect: FeatureMatrix,
    /// Rows reordered so that row `k` pairs with `defect` row `k`.
    pub normal: FeatureMatrix,
}

impl PairedFeatures {
    pub fn len(&self) -> usize {
        self.defect.n()
    }

    pub fn is_empty(&self) -> bool {
        self.defect.n() == 0
    }

    pub fn p(&self) -> usize {
        self.defect.p()
    }

    pub fn pair(&self, k: usize) -> (&[f32], &[f32]) {
        (self.defect.row(k), self.normal.row(k))
    }

    pub fn ids(&self) -> &[String] {
        self.defect.sample_ids()
    }
}

/// Aligns `normal` to `defect` by sample id.
pub fn pair_matrices(defect: &FeatureMatrix, normal: &FeatureMatrix) -> Result<PairedFeatures> {
    if defect.p() != normal.p() {
        return Err(Error::Dimension(format!(
            "feature dimension {} vs {}",
            defect.p(),
            normal.p()
        )));
    }
    if defect.n() != normal.n() {
        return Err(Error::Dimension(format!(
            "sample count {} vs {}",
            defect.n(),
            normal.n()
        )));
    }
    let lookup: HashMap<&str, usize> = normal
        .sample_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let order = defect
        .sample_ids()
        .iter()
        .map(|id| {
            lookup.get(id.as_str()).copied().ok_or_else(|| {
                Error::Validation(format!("sample id misalignment: {id:?} has no normal row"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PairedFeatures {
        defect: defect.clone(),
        normal: normal.select_rows(&order),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m23() -> FeatureMatrix {
        FeatureMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-4.0, 0.5, 6.25]]).unwrap()
    }

    #[test]
    fn two_by_three_is_40_bytes() {
        assert_eq!(m23().to_fgap_bytes().len(), 8 + 4 + 4 + 24);
    }

    #[test]
    fn nan_rejected_before_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fgap");
        let err = FeatureMatrix::from_rows(&[vec![1.0, f32::NAN]]);
        assert!(err.is_err());
        // also when invariants are broken after construction
        let mut m = m23();
        m.values[4] = f32::INFINITY;
        assert!(write_features(&m, &path).is_err());
        assert!(!path.exists());
        assert!(!sidecar_path(&path).exists());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = m23().to_fgap_bytes();
        bytes[..8].copy_from_slice(b"XXXXXXXX");
        let err = FeatureMatrix::from_fgap_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("not an FGAP file"));
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = m23().to_fgap_bytes();
        bytes.truncate(30);
        let err = FeatureMatrix::from_fgap_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("expected 40 bytes"), "{err}");
    }

    #[test]
    fn missing_sidecar_gives_empty_meta() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fgap");
        std::fs::write(&path, m23().to_fgap_bytes()).unwrap();
        let m = read_features(&path).unwrap();
        assert_eq!(m.meta, BackboneMeta::default());
        assert_eq!(m.sample_ids(), &["0", "1"]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(m23().with_ids(vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn pair_dimension_mismatch() {
        let a = FeatureMatrix::from_rows(&vec![vec![0.0; 16]; 5]).unwrap();
        let b = FeatureMatrix::from_rows(&vec![vec![0.0; 32]; 5]).unwrap();
        assert!(matches!(pair_matrices(&a, &b), Err(Error::Dimension(_))));
        let ok = pair_matrices(&a, &a).unwrap();
        assert_eq!(ok.len(), 5);
    }

    #[test]
    fn misaligned_ids_name_first_missing() {
        let a = m23().with_ids(vec!["x".into(), "y".into()]).unwrap();
        let b = m23().with_ids(vec!["x".into(), "z".into()]).unwrap();
        let err = pair_matrices(&a, &b).unwrap_err().to_string();
        assert!(err.contains("\"y\""), "{err}");
    }
}
