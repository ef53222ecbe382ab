//! Aggregation of per-(class, backbone) measurements into tables, plot data
//! and embedding exports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featstore::{BackboneMeta, FeatureMatrix};
use crate::metrics::{mahalanobis_upper_bound, BoundDiagnostic, Metric, SetMetricResult};
use crate::stats::TTestResult;
use crate::util::{to_json_bytes, write_atomic};

/// Flag attached to p-values in the small-sample band.
pub const INCONCLUSIVE_FLAG: &str = "inconclusive-small-sample";

/// What a record's value measures.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    #[default]
    Value,
    PValue,
}

/// Which anomaly-free domain the anomalies were compared with.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    #[default]
    Foreground,
    Background,
}

impl Comparison {
    pub fn as_str(&self) -> &'static str {
        match self {
            Comparison::Foreground => "foreground",
            Comparison::Background => "background",
        }
    }
}

/// One measured value for a (dataset, object, class, backbone) context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub dataset: String,
    pub object_type: String,
    pub anomaly_class: String,
    pub backbone_name: String,
    pub pretrain_dataset: String,
    pub metric: Metric,
    #[serde(default)]
    pub comparison: Comparison,
    #[serde(default)]
    pub statistic: Statistic,
    pub value: f64,
    pub n: usize,
    pub p: usize,
    #[serde(default)]
    pub flags: Vec<String>,
}

type RecordKey = (
    String,
    String,
    String,
    String,
    String,
    Metric,
    Comparison,
    Statistic,
);

impl MetricRecord {
    fn key(&self) -> RecordKey {
        (
            self.dataset.clone(),
            self.object_type.clone(),
            self.anomaly_class.clone(),
            self.backbone_name.clone(),
            self.pretrain_dataset.clone(),
            self.metric,
            self.comparison,
            self.statistic,
        )
    }
}

/// Mean of one metric over every backbone measured for a class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAggregate {
    pub dataset: String,
    pub object_type: String,
    pub anomaly_class: String,
    pub metric: Metric,
    pub comparison: Comparison,
    pub mean_over_backbones: f64,
    pub backbone_count: usize,
    pub pct_of_bound: Option<f64>,
}

/// Averages value records per (dataset, object, class, metric, comparison).
/// P-value records are not averaged.
pub fn aggregate_by_class(records: &[MetricRecord]) -> Result<Vec<ClassAggregate>> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !r.value.is_finite() && r.statistic == Statistic::PValue {
            return Err(Error::Validation(format!(
                "non-finite p-value in record {:?}",
                r.key()
            )));
        }
        if !seen.insert(r.key()) {
            return Err(Error::Validation(format!(
                "duplicate record: {}/{}/{} backbone {} ({}) metric {} {} {:?}",
                r.dataset,
                r.object_type,
                r.anomaly_class,
                r.backbone_name,
                r.pretrain_dataset,
                r.metric,
                r.comparison.as_str(),
                r.statistic
            )));
        }
    }
    let mut groups: BTreeMap<(String, String, String, Metric, Comparison), Vec<f64>> =
        BTreeMap::new();
    for r in records.iter().filter(|r| r.statistic == Statistic::Value) {
        groups
            .entry((
                r.dataset.clone(),
                r.object_type.clone(),
                r.anomaly_class.clone(),
                r.metric,
                r.comparison,
            ))
            .or_default()
            .push(r.value);
    }
    Ok(groups
        .into_iter()
        .map(
            |((dataset, object_type, anomaly_class, metric, comparison), mut values)| {
                // order-independent sum
                values.sort_by(f64::total_cmp);
                ClassAggregate {
                    dataset,
                    object_type,
                    anomaly_class,
                    metric,
                    comparison,
                    mean_over_backbones: values.iter().sum::<f64>() / values.len() as f64,
                    backbone_count: values.len(),
                    pct_of_bound: None,
                }
            },
        )
        .collect())
}

/// Mahalanobis bound per dataset from the largest `n` and `p` over its MH
/// records.
pub fn bound_contexts(records: &[MetricRecord]) -> BTreeMap<String, f64> {
    let mut np: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in records
        .iter()
        .filter(|r| r.metric == Metric::Mh && r.statistic == Statistic::Value)
    {
        let e = np.entry(r.dataset.clone()).or_insert((0, 0));
        e.0 = e.0.max(r.n);
        e.1 = e.1.max(r.p);
    }
    np.into_iter()
        .filter(|(_, (n, p))| *n > 0 && *p > 0)
        .map(|(d, (n, p))| (d, mahalanobis_upper_bound(n, p)))
        .collect()
}

/// Attaches `mean / bound · 100` to every MH aggregate.
pub fn pct_of_bound_report(
    aggregates: &[ClassAggregate],
    bounds: &BTreeMap<String, f64>,
) -> Result<Vec<ClassAggregate>> {
    aggregates
        .iter()
        .map(|a| {
            let mut a = a.clone();
            if a.metric == Metric::Mh {
                let bound = bounds.get(&a.dataset).ok_or_else(|| {
                    Error::Validation(format!("missing bound context for dataset {:?}", a.dataset))
                })?;
                if bound.is_nan() || *bound <= 0.0 {
                    return Err(Error::Validation(format!(
                        "bound for dataset {:?} must be positive, got {bound}",
                        a.dataset
                    )));
                }
                a.pct_of_bound = Some(a.mean_over_backbones / bound * 100.0);
            }
            Ok(a)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
    Json,
}

impl TableFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            TableFormat::Csv => "csv",
            TableFormat::Json => "json",
        }
    }
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            other => Err(Error::Validation(format!(
                "format must be csv|json, got {other:?}"
            ))),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| Error::Validation(format!("csv encoding: {e}"));
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(row).map_err(wrap)?;
    }
    w.into_inner()
        .map_err(|e| Error::Validation(format!("csv encoding: {e}")))
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Writes `class_aggregates.{csv,json}` into `out_dir`.
pub fn emit_tables(
    aggregates: &[ClassAggregate],
    format: TableFormat,
    out_dir: &Path,
) -> Result<PathBuf> {
    if aggregates.is_empty() {
        return Err(Error::Validation("no aggregates to emit".into()));
    }
    let path = out_dir.join(format!("class_aggregates.{}", format.extension()));
    let bytes = match format {
        TableFormat::Json => to_json_bytes(&aggregates)?,
        TableFormat::Csv => {
            let header = strings(&[
                "dataset",
                "object_type",
                "anomaly_class",
                "metric",
                "comparison",
                "mean_over_backbones",
                "backbone_count",
                "pct_of_bound",
            ]);
            let rows: Vec<Vec<String>> = aggregates
                .iter()
                .map(|a| {
                    vec![
                        a.dataset.clone(),
                        a.object_type.clone(),
                        a.anomaly_class.clone(),
                        a.metric.to_string(),
                        a.comparison.as_str().to_string(),
                        a.mean_over_backbones.to_string(),
                        a.backbone_count.to_string(),
                        opt(a.pct_of_bound),
                    ]
                })
                .collect();
            csv_bytes(&header, &rows)?
        }
    };
    write_atomic(&path, &bytes)?;
    Ok(path)
}

/// True for pretraining tags that denote an ImageNet variant.
pub fn is_imagenet(pretrain: &str) -> bool {
    let t = pretrain.to_ascii_lowercase();
    t.starts_with("in1k")
        || t.starts_with("in21k")
        || t.starts_with("in22k")
        || t.contains("imagenet")
}

#[derive(Serialize)]
struct WideTable {
    metric: Metric,
    columns: Vec<String>,
    rows: Vec<WideRow>,
}

#[derive(Serialize)]
struct WideRow {
    dataset: String,
    object_type: String,
    anomaly_class: String,
    values: Vec<Option<f64>>,
}

fn wide_table(records: &[&MetricRecord], metric: Metric) -> WideTable {
    let columns: BTreeSet<(String, String)> = records
        .iter()
        .map(|r| (r.backbone_name.clone(), r.pretrain_dataset.clone()))
        .collect();
    let columns: Vec<(String, String)> = columns.into_iter().collect();
    let mut rows: BTreeMap<(String, String, String), Vec<Option<f64>>> = BTreeMap::new();
    for r in records {
        let col = columns
            .iter()
            .position(|c| c.0 == r.backbone_name && c.1 == r.pretrain_dataset)
            .expect("column collected above");
        rows.entry((
            r.dataset.clone(),
            r.object_type.clone(),
            r.anomaly_class.clone(),
        ))
        .or_insert_with(|| vec![None; columns.len()])[col] = Some(r.value);
    }
    WideTable {
        metric,
        columns: columns.iter().map(|(b, p)| format!("{b}/{p}")).collect(),
        rows: rows
            .into_iter()
            .map(|((dataset, object_type, anomaly_class), values)| WideRow {
                dataset,
                object_type,
                anomaly_class,
                values,
            })
            .collect(),
    }
}

fn write_wide(table: &WideTable, format: TableFormat, path: &Path) -> Result<()> {
    let bytes = match format {
        TableFormat::Json => to_json_bytes(table)?,
        TableFormat::Csv => {
            let mut header = strings(&["dataset", "object_type", "anomaly_class"]);
            header.extend(table.columns.iter().cloned());
            let rows: Vec<Vec<String>> = table
                .rows
                .iter()
                .map(|r| {
                    let mut row = vec![
                        r.dataset.clone(),
                        r.object_type.clone(),
                        r.anomaly_class.clone(),
                    ];
                    row.extend(r.values.iter().map(|v| opt(*v)));
                    row
                })
                .collect();
            csv_bytes(&header, &rows)?
        }
    };
    write_atomic(path, &bytes)
}

/// Class × backbone tables of anomaly↔foreground values, one per metric
/// (`backbones_<metric>`), plus `non_imagenet_<metric>` restricted to
/// backbones pretrained elsewhere. Columns are ordered by backbone, then
/// pretraining dataset.
pub fn emit_backbone_tables(
    records: &[MetricRecord],
    format: TableFormat,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for metric in Metric::ALL {
        let selected: Vec<&MetricRecord> = records
            .iter()
            .filter(|r| {
                r.metric == metric
                    && r.statistic == Statistic::Value
                    && r.comparison == Comparison::Foreground
            })
            .collect();
        if selected.is_empty() {
            continue;
        }
        let tag = metric.as_str().to_ascii_lowercase();
        let path = out_dir.join(format!("backbones_{tag}.{}", format.extension()));
        write_wide(&wide_table(&selected, metric), format, &path)?;
        written.push(path);
        let other: Vec<&MetricRecord> = selected
            .into_iter()
            .filter(|r| !is_imagenet(&r.pretrain_dataset))
            .collect();
        if !other.is_empty() {
            let path = out_dir.join(format!("non_imagenet_{tag}.{}", format.extension()));
            write_wide(&wide_table(&other, metric), format, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    /// Per-class means of JS, MH and WS over backbones.
    ClassCurves,
    /// Every RMI record.
    RmiScatter,
    /// Every p-value record.
    PvalueBars,
}

impl PlotKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlotKind::ClassCurves => "class_curves",
            PlotKind::RmiScatter => "rmi_scatter",
            PlotKind::PvalueBars => "pvalue_bars",
        }
    }
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [
        PlotKind::ClassCurves,
        PlotKind::RmiScatter,
        PlotKind::PvalueBars,
    ];

    /// Whether `r` belongs in this kind of plot.
    pub fn matches(&self, r: &MetricRecord) -> bool {
        match self {
            PlotKind::ClassCurves => r.statistic == Statistic::Value && r.metric != Metric::Rmi,
            PlotKind::RmiScatter => r.statistic == Statistic::Value && r.metric == Metric::Rmi,
            PlotKind::PvalueBars => r.statistic == Statistic::PValue,
        }
    }
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class_curves" => Ok(PlotKind::ClassCurves),
            "rmi_scatter" => Ok(PlotKind::RmiScatter),
            "pvalue_bars" => Ok(PlotKind::PvalueBars),
            other => Err(Error::Validation(format!("unknown plot kind {other:?}"))),
        }
    }
}

fn file_token(s: &str) -> String {
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

/// Writes `<kind>_<dataset>.csv` for every dataset with matching records.
/// The first columns label the class; the last one is the plotted value.
pub fn emit_plot_data(
    records: &[MetricRecord],
    kind: PlotKind,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let matching: Vec<&MetricRecord> = records.iter().filter(|r| kind.matches(r)).collect();
    if matching.is_empty() {
        return Err(Error::Validation(format!("no matching records for {kind}")));
    }
    let mut by_dataset: BTreeMap<&str, Vec<&MetricRecord>> = BTreeMap::new();
    for r in matching {
        by_dataset.entry(r.dataset.as_str()).or_default().push(r);
    }
    let mut written = Vec::new();
    for (dataset, recs) in by_dataset {
        let (header, rows): (Vec<String>, Vec<Vec<String>>) = match kind {
            PlotKind::ClassCurves => {
                let owned: Vec<MetricRecord> = recs.iter().map(|r| (*r).clone()).collect();
                let rows = aggregate_by_class(&owned)?
                    .into_iter()
                    .map(|a| {
                        vec![
                            a.object_type,
                            a.anomaly_class,
                            a.metric.to_string(),
                            a.comparison.as_str().to_string(),
                            a.backbone_count.to_string(),
                            a.mean_over_backbones.to_string(),
                        ]
                    })
                    .collect();
                (
                    strings(&[
                        "object_type",
                        "anomaly_class",
                        "metric",
                        "comparison",
                        "backbone_count",
                        "value",
                    ]),
                    rows,
                )
            }
            PlotKind::RmiScatter | PlotKind::PvalueBars => {
                let mut recs = recs;
                recs.sort_by_key(|r| r.key());
                let rows = recs
                    .iter()
                    .map(|r| {
                        vec![
                            r.object_type.clone(),
                            r.anomaly_class.clone(),
                            r.metric.to_string(),
                            r.comparison.as_str().to_string(),
                            r.backbone_name.clone(),
                            r.pretrain_dataset.clone(),
                            r.value.to_string(),
                        ]
                    })
                    .collect();
                let last = if kind == PlotKind::PvalueBars {
                    "p_value"
                } else {
                    "value"
                };
                (
                    strings(&[
                        "object_type",
                        "anomaly_class",
                        "metric",
                        "comparison",
                        "backbone_name",
                        "pretrain_dataset",
                        last,
                    ]),
                    rows,
                )
            }
        };
        let path = out_dir.join(format!("{}_{}.csv", kind.as_str(), file_token(dataset)));
        write_atomic(&path, &csv_bytes(&header, &rows)?)?;
        written.push(path);
    }
    Ok(written)
}

/// Writes every row of `matrices` to one CSV with columns
/// `sample_id,label,f0..f{p-1}`; the label is the matrix's sample kind.
/// Returns the number of rows written.
pub fn export_embeddings(matrices: &[FeatureMatrix], path: &Path) -> Result<usize> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::Validation("no matrices to export".into()))?;
    let p = first.p();
    if let Some(m) = matrices.iter().find(|m| m.p() != p) {
        return Err(Error::Dimension(format!(
            "feature dimension {} vs {p}",
            m.p()
        )));
    }
    let mut header = strings(&["sample_id", "label"]);
    header.extend((0..p).map(|j| format!("f{j}")));
    let mut rows = Vec::new();
    for m in matrices {
        let label = m.meta.kind.map(|k| k.as_str()).unwrap_or("unknown");
        for (i, row) in m.rows().enumerate() {
            let mut out = vec![m.sample_ids()[i].clone(), label.to_string()];
            out.extend(row.iter().map(|v| v.to_string()));
            rows.push(out);
        }
    }
    write_atomic(path, &csv_bytes(&header, &rows)?)?;
    Ok(rows.len())
}

/// A t-test of one metric's anomaly↔foreground against anomaly↔background
/// per-pair values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTest {
    pub metric: Metric,
    pub test: TTestResult,
}

/// Output of one `measure` invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    /// Provenance of the defect features.
    pub meta: BackboneMeta,
    pub foreground: Vec<SetMetricResult>,
    #[serde(default)]
    pub background: Vec<SetMetricResult>,
    #[serde(default)]
    pub tests: Vec<MetricTest>,
    pub bound_checks: Vec<BoundDiagnostic>,
}

impl MeasureReport {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &to_json_bytes(self)?)
    }

    /// Flattens the report into value and p-value records.
    pub fn records(&self) -> Vec<MetricRecord> {
        let m = &self.meta;
        let base = |metric: Metric, comparison, statistic, value, n, p, flags| MetricRecord {
            dataset: m.dataset.clone(),
            object_type: m.object_type.clone(),
            anomaly_class: m.anomaly_class.clone(),
            backbone_name: m.backbone_name.clone(),
            pretrain_dataset: m.pretrain_dataset.clone(),
            metric,
            comparison,
            statistic,
            value,
            n,
            p,
            flags,
        };
        let mut out = Vec::new();
        for (comparison, results) in [
            (Comparison::Foreground, &self.foreground),
            (Comparison::Background, &self.background),
        ] {
            for r in results {
                let mut flags = Vec::new();
                if r.details.approx {
                    flags.push("approx".to_string());
                }
                let failed = self
                    .bound_checks
                    .iter()
                    .any(|d| d.metric == r.metric && !d.passed);
                if comparison == Comparison::Foreground && failed {
                    flags.push("bound-violation".to_string());
                }
                out.push(base(
                    r.metric,
                    comparison,
                    Statistic::Value,
                    r.value,
                    r.n,
                    r.p,
                    flags,
                ));
            }
        }
        for t in &self.tests {
            let mut flags = Vec::new();
            if t.test.inconclusive_small_sample {
                flags.push(INCONCLUSIVE_FLAG.to_string());
            }
            out.push(base(
                t.metric,
                Comparison::Foreground,
                Statistic::PValue,
                t.test.p_one_tailed,
                t.test.n_a + t.test.n_b,
                0,
                flags,
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rec(class: &str, backbone: &str, metric: Metric, value: f64) -> MetricRecord {
        MetricRecord {
            dataset: "d".into(),
            object_type: "o".into(),
            anomaly_class: class.into(),
            backbone_name: backbone.into(),
            pretrain_dataset: "IN1K".into(),
            metric,
            comparison: Comparison::Foreground,
            statistic: Statistic::Value,
            value,
            n: 10,
            p: 4,
            flags: vec![],
        }
    }

    #[test]
    fn mean_over_backbones() {
        let recs = vec![
            rec("a", "b1", Metric::Js, 10.0),
            rec("a", "b2", Metric::Js, 20.0),
            rec("a", "b3", Metric::Js, 30.0),
        ];
        let agg = aggregate_by_class(&recs).unwrap();
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].mean_over_backbones, 20.0);
        assert_eq!(agg[0].backbone_count, 3);
        let one = aggregate_by_class(&recs[..1]).unwrap();
        assert_eq!(one[0].mean_over_backbones, 10.0);
    }

    #[test]
    fn table_row_mean() {
        // a JS row across six backbone/pretraining columns, ×10⁻⁴
        let recs: Vec<MetricRecord> = [24.0, 11.0, 7.0, 2.0, 11.0, 9.0]
            .iter()
            .enumerate()
            .map(|(i, v)| rec("patches", &format!("bit{i}"), Metric::Js, v * 1e-4))
            .collect();
        let agg = aggregate_by_class(&recs).unwrap();
        let expected = (24.0 + 11.0 + 7.0 + 2.0 + 11.0 + 9.0) / 6.0 * 1e-4;
        assert!((agg[0].mean_over_backbones - expected).abs() < 1e-15);
        assert!((agg[0].mean_over_backbones * 1e4 - 10.67).abs() < 5e-3);
    }

    #[test]
    fn duplicate_named() {
        let recs = vec![
            rec("a", "b1", Metric::Js, 1.0),
            rec("a", "b1", Metric::Js, 2.0),
        ];
        let err = aggregate_by_class(&recs).unwrap_err().to_string();
        assert!(
            err.contains("duplicate record") && err.contains("b1"),
            "{err}"
        );
    }

    #[test]
    fn percent_of_bound() {
        let mk = |dataset: &str, mean: f64| ClassAggregate {
            dataset: dataset.into(),
            object_type: "o".into(),
            anomaly_class: "c".into(),
            metric: Metric::Mh,
            comparison: Comparison::Foreground,
            mean_over_backbones: mean,
            backbone_count: 1,
            pct_of_bound: None,
        };
        let bounds: BTreeMap<String, f64> = [
            ("btad".to_string(), 495.1),
            ("neu".to_string(), 882.1),
            ("z".to_string(), 10.0),
        ]
        .into();
        let out = pct_of_bound_report(&[mk("btad", 37.2), mk("neu", 102.7), mk("z", 0.0)], &bounds)
            .unwrap();
        assert!((out[0].pct_of_bound.unwrap() - 7.5).abs() < 0.05);
        assert!((out[1].pct_of_bound.unwrap() - 11.6).abs() < 0.05);
        assert_eq!(out[2].pct_of_bound, Some(0.0));
        let err = pct_of_bound_report(&[mk("mvtec", 1.0)], &bounds).unwrap_err();
        assert!(err.to_string().contains("missing bound context"));
    }

    #[test]
    fn bound_context_uses_largest_class() {
        let mut a = rec("a", "b", Metric::Mh, 1.0);
        a.n = 497;
        a.p = 1000;
        let mut b = rec("b", "b", Metric::Mh, 1.0);
        b.n = 100;
        b.p = 1000;
        let ctx = bound_contexts(&[a, b]);
        assert_eq!(ctx["d"], mahalanobis_upper_bound(497, 1000));
    }

    #[test]
    fn csv_table_shape_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let agg = aggregate_by_class(&[
            rec("a", "b", Metric::Js, 1.0),
            rec("b", "b", Metric::Js, 2.0),
        ])
        .unwrap();
        let path = emit_tables(&agg, TableFormat::Csv, dir.path()).unwrap();
        let first = std::fs::read(&path).unwrap();
        assert_eq!(String::from_utf8_lossy(&first).lines().count(), 3);
        emit_tables(&agg, TableFormat::Csv, dir.path()).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
        let jpath = emit_tables(&agg, TableFormat::Json, dir.path()).unwrap();
        let back: Vec<ClassAggregate> =
            serde_json::from_slice(&std::fs::read(jpath).unwrap()).unwrap();
        assert_eq!(back, agg);
    }

    #[test]
    fn plot_data_rows() {
        let dir = tempfile::tempdir().unwrap();
        let recs: Vec<MetricRecord> = ["c1", "c2", "c3", "c4"]
            .iter()
            .map(|c| rec(c, "b", Metric::Js, 0.5))
            .collect();
        let files = emit_plot_data(&recs, PlotKind::ClassCurves, dir.path()).unwrap();
        assert_eq!(files.len(), 1);
        let text = std::fs::read_to_string(&files[0]).unwrap();
        assert_eq!(text.lines().count(), 5);

        let rmi = vec![
            rec("c1", "none", Metric::Rmi, -3.25),
            rec("c2", "none", Metric::Rmi, 1.5),
        ];
        let err = emit_plot_data(&rmi, PlotKind::PvalueBars, dir.path()).unwrap_err();
        assert!(err.to_string().contains("no matching records"));
        let files = emit_plot_data(&rmi, PlotKind::RmiScatter, dir.path()).unwrap();
        let text = std::fs::read_to_string(&files[0]).unwrap();
        let values: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(values, vec![-3.25, 1.5]);
    }

    #[test]
    fn backbone_columns_ordered() {
        let dir = tempfile::tempdir().unwrap();
        let mut r2 = rec("a", "alpha", Metric::Js, 2.0);
        r2.pretrain_dataset = "places".into();
        let recs = vec![rec("a", "zeta", Metric::Js, 1.0), r2];
        let files = emit_backbone_tables(&recs, TableFormat::Csv, dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        let text = std::fs::read_to_string(&files[0]).unwrap();
        assert!(
            text.starts_with("dataset,object_type,anomaly_class,alpha/places,zeta/IN1K"),
            "{text}"
        );
        let other = std::fs::read_to_string(&files[1]).unwrap();
        assert!(other.contains("alpha/places") && !other.contains("zeta"));
    }

    #[test]
    fn embeddings_csv() {
        use crate::featstore::SampleKind;
        let dir = tempfile::tempdir().unwrap();
        let mk = |kind, v: f32| {
            FeatureMatrix::from_rows(&vec![vec![v; 8]; 3])
                .unwrap()
                .with_meta(BackboneMeta {
                    kind: Some(kind),
                    ..Default::default()
                })
        };
        let path = dir.path().join("e.csv");
        let n = export_embeddings(
            &[mk(SampleKind::Defect, 1.0), mk(SampleKind::NormalFg, 0.0)],
            &path,
        )
        .unwrap();
        assert_eq!(n, 6);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.lines().nth(1).unwrap().starts_with("0,defect,1"));
        let bad = FeatureMatrix::from_rows(&[vec![0.0; 4]]).unwrap();
        assert!(export_embeddings(&[mk(SampleKind::Defect, 1.0), bad], &path).is_err());
    }
}
