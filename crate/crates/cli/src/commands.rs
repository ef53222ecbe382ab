//! One function per subcommand. Each returns core errors; the caller adds
//! the stage name.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use repgap_core::corpus::{
    adapt_mvtec, build_crop_sets, load_manifest, write_crop_sets, PairEntry, PairsIndex,
};
use repgap_core::featstore::{pair_matrices, read_features, write_features};
use repgap_core::metrics::{
    js_set, mahalanobis_set, rmi, verify_bounds, wasserstein2_set, BoundDiagnostic,
};
use repgap_core::report::{
    aggregate_by_class, bound_contexts, emit_backbone_tables, emit_plot_data, emit_tables,
    export_embeddings, pct_of_bound_report, Comparison, MeasureReport, MetricTest, PlotKind,
    TableFormat,
};
use repgap_core::stats::{hypothesis_test, GroupLabel, MeasurementGroup};
use repgap_core::{
    pixelfeat, write_json, AnnotationManifest, BackboneMeta, Error, FeatureMatrix, Metric,
    MetricRecord, PixelPatch, Result, SampleKind, SetMetricResult, TTestResult, Tail,
};

/// Manifest from a JSON file or from an MVTec-style directory.
pub fn load_input(
    manifest: Option<&Path>,
    mvtec: Option<(&Path, &str)>,
) -> Result<AnnotationManifest> {
    match (manifest, mvtec) {
        (Some(path), _) => load_manifest(path),
        (None, Some((root, object))) => adapt_mvtec(root, object),
        (None, None) => Err(Error::Validation("no manifest given".into())),
    }
}

pub fn prepare(
    manifest: &AnnotationManifest,
    out: &Path,
    size: u32,
    seed: u64,
) -> Result<PairsIndex> {
    let sets = build_crop_sets(manifest, size, seed)?;
    for s in &sets.skips {
        log::warn!(
            "skipped {} region {} ({}): {}",
            s.image_id,
            s.index,
            s.anomaly_class,
            s.reason
        );
    }
    write_crop_sets(&sets, out, size, seed)
}

fn token(s: &str) -> String {
    let t: String = s
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '-'
            }
        })
        .collect();
    if t.is_empty() {
        "unnamed".into()
    } else {
        t
    }
}

/// File stem shared by every artifact of a (dataset, object, class) group.
pub fn group_stem(dataset: &str, object_type: &str, anomaly_class: &str) -> String {
    format!(
        "{}__{}__{}",
        token(dataset),
        token(object_type),
        token(anomaly_class)
    )
}

/// Pairs of `index` grouped by (dataset, object, class), in index order.
pub fn grouped(index: &PairsIndex) -> BTreeMap<(String, String, String), Vec<&PairEntry>> {
    let mut out: BTreeMap<_, Vec<&PairEntry>> = BTreeMap::new();
    for e in &index.pairs {
        out.entry((
            e.dataset.clone(),
            e.object_type.clone(),
            e.anomaly_class.clone(),
        ))
        .or_default()
        .push(e);
    }
    out
}

fn load_crop(dir: &Path, rel: &str) -> Result<PixelPatch> {
    PixelPatch::load(&dir.join(rel))
}

/// Feature files written for one group.
#[derive(Debug, Clone)]
pub struct GroupFeatures {
    pub stem: String,
    pub defect: PathBuf,
    pub normal: PathBuf,
    pub background: Option<PathBuf>,
}

/// Embeds every crop listed in `pairs_path` with the pixel-grid embedding
/// and writes one FGAP file per group and sample kind into `out`.
pub fn embed(pairs_path: &Path, out: &Path, grid: usize) -> Result<Vec<GroupFeatures>> {
    let index = PairsIndex::read(pairs_path)?;
    let dir = pairs_path.parent().unwrap_or(Path::new(""));
    let mut written = Vec::new();
    for ((dataset, object_type, anomaly_class), entries) in grouped(&index) {
        let stem = group_stem(&dataset, &object_type, &anomaly_class);
        let meta = |kind| BackboneMeta {
            backbone_name: pixelfeat::BACKBONE_NAME.into(),
            pretrain_dataset: "none".into(),
            dataset: dataset.clone(),
            object_type: object_type.clone(),
            anomaly_class: anomaly_class.clone(),
            kind: Some(kind),
            layer_tag: format!("grid{grid}"),
        };
        let embed_kind = |kind: SampleKind,
                          pick: &dyn Fn(&PairEntry) -> Option<&str>|
         -> Result<Option<PathBuf>> {
            let mut patches = Vec::new();
            let mut ids = Vec::new();
            for e in &entries {
                if let Some(rel) = pick(e) {
                    patches.push(load_crop(dir, rel)?);
                    ids.push(e.id.clone());
                }
            }
            if patches.is_empty() {
                return Ok(None);
            }
            let refs: Vec<&PixelPatch> = patches.iter().collect();
            let m = pixelfeat::embed_patches(&refs, ids, grid, meta(kind))?;
            let path = out.join(format!("{stem}__{}.fgap", kind.as_str()));
            write_features(&m, &path)?;
            Ok(Some(path))
        };
        let defect = embed_kind(SampleKind::Defect, &|e| Some(e.defect.as_str()))?
            .expect("group is non-empty");
        let normal = embed_kind(SampleKind::NormalFg, &|e| Some(e.fg.as_str()))?
            .expect("group is non-empty");
        let background = embed_kind(SampleKind::Background, &|e| e.bg.as_deref())?;
        written.push(GroupFeatures {
            stem,
            defect,
            normal,
            background,
        });
    }
    Ok(written)
}

fn metric_result(
    metric: Metric,
    defect: &FeatureMatrix,
    normal: &FeatureMatrix,
) -> Result<SetMetricResult> {
    match metric {
        Metric::Js => js_set(&pair_matrices(defect, normal)?),
        Metric::Mh => mahalanobis_set(defect, normal),
        Metric::Ws => wasserstein2_set(defect, normal),
        Metric::Rmi => Err(Error::Validation(
            "RMI works on pixel crops; use the rmi subcommand".into(),
        )),
    }
}

/// Rows of `m` whose ids occur in `ids`, in `m`'s order.
fn restrict(m: &FeatureMatrix, ids: &[String]) -> FeatureMatrix {
    let keep: HashSet<&str> = ids.iter().map(String::as_str).collect();
    let order: Vec<usize> = (0..m.n())
        .filter(|&i| keep.contains(m.sample_ids()[i].as_str()))
        .collect();
    m.select_rows(&order)
}

/// Computes the requested metrics of the defect set against the normal
/// foreground set and, when given, the background set, then t-tests the
/// per-pair values of the two comparisons.
pub fn measure_matrices(
    defect: &FeatureMatrix,
    normal: &FeatureMatrix,
    background: Option<&FeatureMatrix>,
    metrics: &[Metric],
    alpha: f64,
    tail: Tail,
) -> Result<MeasureReport> {
    let mut foreground = Vec::new();
    let mut back = Vec::new();
    let mut tests = Vec::new();
    let bg_defect = background.map(|b| restrict(defect, b.sample_ids()));
    for &metric in metrics {
        let fg = metric_result(metric, defect, normal)?;
        if let (Some(b), Some(d)) = (background, &bg_defect) {
            let bg = metric_result(metric, d, b)?;
            let a = fg.per_pair_values.clone().unwrap_or_default();
            let c = bg.per_pair_values.clone().unwrap_or_default();
            if a.len() >= 2 && c.len() >= 2 {
                let test = hypothesis_test(
                    &MeasurementGroup::new(GroupLabel::AnomalyForeground, a)?,
                    &MeasurementGroup::new(GroupLabel::AnomalyBackground, c)?,
                    alpha,
                    tail,
                )?;
                tests.push(MetricTest { metric, test });
            } else {
                log::warn!("{metric}: fewer than 2 values per group, t-test skipped");
            }
            back.push(bg);
        }
        foreground.push(fg);
    }
    let bound_checks = foreground.iter().chain(&back).map(verify_bounds).collect();
    Ok(MeasureReport {
        meta: defect.meta.clone(),
        foreground,
        background: back,
        tests,
        bound_checks,
    })
}

pub fn measure(
    defect: &Path,
    normal: &Path,
    background: Option<&Path>,
    metrics: &[Metric],
    alpha: f64,
    tail: Tail,
) -> Result<MeasureReport> {
    let d = read_features(defect)?;
    let n = read_features(normal)?;
    let b = background.map(read_features).transpose()?;
    measure_matrices(&d, &n, b.as_ref(), metrics, alpha, tail)
}

/// Per-pair RMI of the defect crop against its foreground and background
/// partners.
#[derive(Debug, Clone, PartialEq)]
pub struct RmiRow {
    pub id: String,
    pub dataset: String,
    pub object_type: String,
    pub anomaly_class: String,
    pub foreground: f64,
    pub background: Option<f64>,
}

pub fn rmi_rows(pairs_path: &Path, region: usize) -> Result<Vec<RmiRow>> {
    let index = PairsIndex::read(pairs_path)?;
    let dir = pairs_path.parent().unwrap_or(Path::new(""));
    index
        .pairs
        .iter()
        .map(|e| {
            let d = load_crop(dir, &e.defect)?;
            let f = load_crop(dir, &e.fg)?;
            let background = match &e.bg {
                Some(rel) => Some(rmi(&d, &load_crop(dir, rel)?, region)?),
                None => None,
            };
            Ok(RmiRow {
                id: e.id.clone(),
                dataset: e.dataset.clone(),
                object_type: e.object_type.clone(),
                anomaly_class: e.anomaly_class.clone(),
                foreground: rmi(&d, &f, region)?,
                background,
            })
        })
        .collect()
}

pub fn write_rmi_csv(rows: &[RmiRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| Error::Validation(format!("csv encoding: {e}"));
    w.write_record([
        "id",
        "dataset",
        "object_type",
        "anomaly_class",
        "rmi_foreground",
        "rmi_background",
    ])
    .map_err(wrap)?;
    for r in rows {
        w.write_record([
            r.id.clone(),
            r.dataset.clone(),
            r.object_type.clone(),
            r.anomaly_class.clone(),
            r.foreground.to_string(),
            r.background.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(wrap)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Validation(format!("csv encoding: {e}")))?;
    repgap_core::write_atomic(path, &bytes)
}

/// Mean RMI per group and comparison as report records.
pub fn rmi_records(rows: &[RmiRow], region: usize) -> Vec<MetricRecord> {
    let mut groups: BTreeMap<(String, String, String, Comparison), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let key = |c| {
            (
                r.dataset.clone(),
                r.object_type.clone(),
                r.anomaly_class.clone(),
                c,
            )
        };
        groups
            .entry(key(Comparison::Foreground))
            .or_default()
            .push(r.foreground);
        if let Some(b) = r.background {
            groups
                .entry(key(Comparison::Background))
                .or_default()
                .push(b);
        }
    }
    groups
        .into_iter()
        .map(
            |((dataset, object_type, anomaly_class, comparison), values)| MetricRecord {
                dataset,
                object_type,
                anomaly_class,
                backbone_name: "none".into(),
                pretrain_dataset: "none".into(),
                metric: Metric::Rmi,
                comparison,
                statistic: Default::default(),
                value: values.iter().sum::<f64>() / values.len() as f64,
                n: values.len(),
                p: region * region,
                flags: vec![],
            },
        )
        .collect()
}

/// Reads one value per line; a non-numeric first line is taken as a header.
pub fn read_values(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    let mut values = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        let Some(field) = rec.get(0).filter(|f| !f.is_empty()) else {
            continue;
        };
        match field.parse::<f64>() {
            Ok(v) => values.push(v),
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::Validation(format!(
                    "{}: line {}: {field:?} is not a number",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(values)
}

pub fn ttest(a: &Path, b: &Path, alpha: f64, tail: Tail) -> Result<TTestResult> {
    let ga = MeasurementGroup::new(GroupLabel::AnomalyForeground, read_values(a)?)?;
    let gb = MeasurementGroup::new(GroupLabel::AnomalyBackground, read_values(b)?)?;
    hypothesis_test(&ga, &gb, alpha, tail)
}

/// Records from every `*.json` file directly inside `dir`: measure reports
/// or plain record lists.
pub fn collect_records(dir: &Path) -> Result<Vec<MetricRecord>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.is_file())
        .collect();
    files.sort();
    let mut records = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
        if let Ok(r) = serde_json::from_str::<MeasureReport>(&text) {
            records.extend(r.records());
        } else {
            let list: Vec<MetricRecord> = serde_json::from_str(&text).map_err(|e| {
                Error::Validation(format!(
                    "{}: neither a measure report nor a record list ({e})",
                    f.display()
                ))
            })?;
            records.extend(list);
        }
    }
    if records.is_empty() {
        return Err(Error::Validation(format!(
            "{}: no measurement files",
            dir.display()
        )));
    }
    Ok(records)
}

/// Writes aggregates, backbone tables, plot data and the flat record list.
pub fn report(records: &[MetricRecord], out: &Path, format: TableFormat) -> Result<Vec<PathBuf>> {
    let aggregates = aggregate_by_class(records)?;
    let aggregates = pct_of_bound_report(&aggregates, &bound_contexts(records))?;
    let mut written = vec![emit_tables(&aggregates, format, out)?];
    written.extend(emit_backbone_tables(records, format, out)?);
    let plots = out.join("plots");
    for kind in PlotKind::ALL {
        if records.iter().any(|r| kind.matches(r)) {
            written.extend(emit_plot_data(records, kind, &plots)?);
        }
    }
    let path = out.join("records.json");
    write_json(&path, &records)?;
    written.push(path);
    Ok(written)
}

pub fn export(inputs: &[PathBuf], out: &Path) -> Result<usize> {
    let matrices = inputs
        .iter()
        .map(read_features)
        .collect::<Result<Vec<_>>>()?;
    export_embeddings(&matrices, out)
}

/// Re-checks results stored in a measure report, a single result or a
/// list of results.
pub fn verify_file(path: &Path) -> Result<Vec<BoundDiagnostic>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let results: Vec<SetMetricResult> = if let Ok(r) = serde_json::from_str::<MeasureReport>(&text)
    {
        r.foreground.into_iter().chain(r.background).collect()
    } else if let Ok(r) = serde_json::from_str::<SetMetricResult>(&text) {
        vec![r]
    } else {
        serde_json::from_str(&text).map_err(|e| {
            Error::Validation(format!("{}: no metric results found ({e})", path.display()))
        })?
    };
    Ok(results.iter().map(verify_bounds).collect())
}
