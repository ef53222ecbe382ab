//! The `run` subcommand: every stage in order under one output directory.
//!
//! ```text
//! <out>/run.json               resolved settings
//! <out>/fixture/               synthetic images (only with --synthetic)
//! <out>/crops/                 normalized crops and pairs.json
//! <out>/features/              FGAP files per group and sample kind
//! <out>/measure/               one report per group, plus rmi.json
//! <out>/rmi/rmi.csv            per-pair RMI
//! <out>/report/                tables, plot data, records.json
//! <out>/bounds.json            every bound diagnostic
//! ```

use std::path::PathBuf;

use repgap_core::featstore::read_features;
use repgap_core::metrics::BoundDiagnostic;
use repgap_core::report::TableFormat;
use repgap_core::synth::{self, SynthConfig};
use repgap_core::{write_json, Metric, Tail};
use serde::Serialize;

use crate::commands;
use crate::config::{resolve_seed, RunConfig};
use crate::CliError;

/// Settings echoed into `run.json`; paths are left out so that runs into
/// different directories produce identical trees.
#[derive(Serialize)]
struct RunRecord<'a> {
    seed: u64,
    target_size: u32,
    metrics: &'a [Metric],
    alpha: f64,
    tail: Tail,
    region: usize,
    grid: usize,
    source: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out: PathBuf,
    pub pairs: usize,
    pub groups_measured: usize,
    /// Failed checks over all bound diagnostics.
    pub bound_failures: usize,
}

fn stage<T>(name: &'static str, r: repgap_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::stage(name, e))
}

pub fn run_pipeline(cfg: &RunConfig, seed_flag: Option<u64>) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let seed = resolve_seed(seed_flag, cfg.seed)?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("run needs --out (or \"out\" in the config)".into()))?;
    let (manifest_path, source) = match (&cfg.manifest, cfg.synthetic) {
        (Some(_), true) => {
            return Err(CliError::Usage(
                "--manifest and --synthetic are mutually exclusive".into(),
            ))
        }
        (Some(m), false) => (m.clone(), "manifest"),
        (None, true) => {
            let dir = out.join("fixture");
            let sc = SynthConfig {
                images_per_class: cfg.images_per_class,
                seed,
                ..Default::default()
            };
            stage("synth", synth::generate(&sc, &dir))?;
            (dir.join("manifest.json"), "synthetic")
        }
        (None, false) => {
            return Err(CliError::Usage(
                "run needs --manifest or --synthetic".into(),
            ));
        }
    };
    stage(
        "run",
        write_json(
            &out.join("run.json"),
            &RunRecord {
                seed,
                target_size: cfg.target_size,
                metrics: &cfg.metrics,
                alpha: cfg.alpha,
                tail: cfg.tail,
                region: cfg.region,
                grid: cfg.grid,
                source,
            },
        ),
    )?;

    let manifest = stage("prepare", commands::load_input(Some(&manifest_path), None))?;
    let crops = out.join("crops");
    let index = stage(
        "prepare",
        commands::prepare(&manifest, &crops, cfg.target_size, seed),
    )?;
    let pairs_path = crops.join("pairs.json");
    log::info!(
        "prepare: {} pairs, {} skipped",
        index.pairs.len(),
        index.skipped.len()
    );

    let feature_metrics: Vec<Metric> = cfg
        .metrics
        .iter()
        .copied()
        .filter(|m| *m != Metric::Rmi)
        .collect();
    let measure_dir = out.join("measure");
    let mut diagnostics: Vec<BoundDiagnostic> = Vec::new();
    let mut groups_measured = 0;
    if !feature_metrics.is_empty() {
        let groups = stage(
            "embed",
            commands::embed(&pairs_path, &out.join("features"), cfg.grid),
        )?;
        for g in groups {
            let defect = stage("measure", read_features(&g.defect))?;
            if defect.n() < 2 {
                log::warn!(
                    "{}: {} pair(s), need at least 2; not measured",
                    g.stem,
                    defect.n()
                );
                continue;
            }
            let normal = stage("measure", read_features(&g.normal))?;
            let background = match &g.background {
                Some(p) => Some(stage("measure", read_features(p))?).filter(|b| b.n() >= 2),
                None => None,
            };
            let report = commands::measure_matrices(
                &defect,
                &normal,
                background.as_ref(),
                &feature_metrics,
                cfg.alpha,
                cfg.tail,
            )
            .map_err(|e| CliError::stage(format!("measure {}", g.stem), e))?;
            stage(
                "measure",
                report.write(&measure_dir.join(format!("{}.json", g.stem))),
            )?;
            diagnostics.extend(report.bound_checks.iter().cloned());
            groups_measured += 1;
        }
    }
    let with_rmi = cfg.metrics.contains(&Metric::Rmi);
    if with_rmi {
        let rows = stage("rmi", commands::rmi_rows(&pairs_path, cfg.region))?;
        stage(
            "rmi",
            commands::write_rmi_csv(&rows, &out.join("rmi").join("rmi.csv")),
        )?;
        stage(
            "rmi",
            write_json(
                &measure_dir.join("rmi.json"),
                &commands::rmi_records(&rows, cfg.region),
            ),
        )?;
    }
    if groups_measured == 0 && !with_rmi {
        return Err(CliError::stage(
            "measure",
            repgap_core::Error::Validation("no group had enough pairs to measure".into()),
        ));
    }

    let records = stage("report", commands::collect_records(&measure_dir))?;
    stage(
        "report",
        commands::report(&records, &out.join("report"), TableFormat::Csv),
    )?;

    stage(
        "verify-bounds",
        write_json(&out.join("bounds.json"), &diagnostics),
    )?;
    let bound_failures = diagnostics
        .iter()
        .flat_map(|d| &d.checks)
        .filter(|c| !c.passed)
        .count();
    Ok(RunSummary {
        out,
        pairs: index.pairs.len(),
        groups_measured,
        bound_failures,
    })
}
