//! Command-line front end: `repgap <subcommand>`.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 validation, 5 numerical
//! (including failed bound checks).

pub mod commands;
pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};
use repgap_core::metrics::{BoundDiagnostic, DEFAULT_REGION};
use repgap_core::pixelfeat::DEFAULT_GRID;
use repgap_core::report::TableFormat;
use repgap_core::synth::SynthConfig;
use repgap_core::{write_json, Decision, Error, ErrorCategory, Metric, Tail, DEFAULT_TARGET_SIZE};

use config::{resolve_seed, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Stage { stage: String, source: Error },
    BoundsFailed(usize),
}

impl CliError {
    pub fn stage(stage: impl Into<String>, source: Error) -> Self {
        CliError::Stage {
            stage: stage.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Stage { source, .. } => match source.category() {
                ErrorCategory::Io => 3,
                ErrorCategory::Validation => 4,
                ErrorCategory::Numerical => 5,
            },
            CliError::BoundsFailed(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Stage { stage, source } => write!(f, "{stage}: {source}"),
            CliError::BoundsFailed(n) => write!(f, "verify-bounds: {n} check(s) failed"),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Parser)]
#[command(
    name = "repgap",
    version,
    about = "Measure how far anomalous visual patterns are from anomaly-free ones"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cut paired defect / foreground / background crops from annotated images
    Prepare(PrepareArgs),
    /// Embed prepared crops with the built-in pixel-grid features
    Embed(EmbedArgs),
    /// Compute JS, MH and WS between feature sets
    Measure(MeasureArgs),
    /// Region mutual information between paired crops
    Rmi(RmiArgs),
    /// One-tailed two-sample homoscedastic t-test
    Ttest(TtestArgs),
    /// Aggregate measurements into tables and plot data
    Report(ReportArgs),
    /// Concatenate feature files into one labelled CSV
    ExportEmbeddings(ExportArgs),
    /// Re-check stored results against their theoretical bounds
    VerifyBounds(VerifyArgs),
    /// Run prepare, embed, measure, rmi, report and verify-bounds in order
    Run(RunArgs),
    /// Generate the synthetic inspection fixture
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").required(true).args(["manifest", "mvtec"])))]
pub struct PrepareArgs {
    /// Annotation manifest (JSON)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// MVTec-style dataset root, used instead of a manifest
    #[arg(long, requires = "object")]
    pub mvtec: Option<PathBuf>,
    /// Object type under the MVTec root
    #[arg(long)]
    pub object: Option<String>,
    /// Output directory for crops and pairs.json
    #[arg(long)]
    pub out: PathBuf,
    /// Side length of normalized crops
    #[arg(long, default_value_t = DEFAULT_TARGET_SIZE)]
    pub size: u32,
    /// Placement seed [default: $REPGAP_SEED or 42]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// pairs.json written by prepare
    #[arg(long)]
    pub pairs: PathBuf,
    /// Output directory for FGAP files
    #[arg(long)]
    pub out: PathBuf,
    /// Blocks per side of the embedding grid
    #[arg(long, default_value_t = DEFAULT_GRID)]
    pub grid: usize,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    /// Defect features (FGAP)
    #[arg(long)]
    pub defect: PathBuf,
    /// Anomaly-free foreground features (FGAP)
    #[arg(long)]
    pub normal: PathBuf,
    /// Background features (FGAP); enables the t-test
    #[arg(long)]
    pub background: Option<PathBuf>,
    /// Comma-separated subset of js,mh,ws
    #[arg(long, value_delimiter = ',', default_values_t = [Metric::Js, Metric::Mh, Metric::Ws])]
    pub metrics: Vec<Metric>,
    /// Significance level of the t-test
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Alternative hypothesis direction on mean(FG) - mean(BG)
    #[arg(long, default_value_t = Tail::Lower)]
    pub tail: Tail,
    /// Output JSON
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RmiArgs {
    /// pairs.json written by prepare
    #[arg(long)]
    pub pairs: PathBuf,
    /// Odd neighbourhood side
    #[arg(long, default_value_t = DEFAULT_REGION)]
    pub region: usize,
    /// Output CSV, one row per pair
    #[arg(long)]
    pub out: PathBuf,
    /// Also write per-group mean records (JSON) for the report stage
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TtestArgs {
    /// Values of the anomaly-foreground group, one per line
    #[arg(long)]
    pub group_a: PathBuf,
    /// Values of the anomaly-background group, one per line
    #[arg(long)]
    pub group_b: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = Tail::Lower)]
    pub tail: Tail,
    /// Output JSON; printed to stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory of measure reports and record lists
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// csv or json
    #[arg(long, default_value = "csv")]
    pub format: TableFormat,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// FGAP files to concatenate
    #[arg(long = "in", num_args = 1.., required = true)]
    pub input: Vec<PathBuf>,
    /// Output CSV
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Measure report or metric result JSON
    #[arg(long = "in")]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Annotation manifest (JSON)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Generate and use the synthetic fixture
    #[arg(long)]
    pub synthetic: bool,
    /// Images per defect class of the synthetic fixture
    #[arg(long)]
    pub images_per_class: Option<usize>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed [default: $REPGAP_SEED, then config, then 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Side length of normalized crops
    #[arg(long)]
    pub size: Option<u32>,
    /// Comma-separated subset of js,mh,ws,rmi
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<Metric>>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub tail: Option<Tail>,
    /// RMI neighbourhood side
    #[arg(long)]
    pub region: Option<usize>,
    /// Blocks per side of the embedding grid
    #[arg(long)]
    pub grid: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated defect class names
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    #[arg(long, default_value_t = 10)]
    pub images_per_class: usize,
    /// Defect-free images
    #[arg(long, default_value_t = 2)]
    pub good: usize,
    /// Image side in pixels
    #[arg(long, default_value_t = 128)]
    pub size: u32,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn stage<T>(name: &str, r: repgap_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::stage(name, e))
}

fn print_diagnostics(diags: &[BoundDiagnostic]) -> usize {
    let mut failed = 0;
    for d in diags {
        for c in &d.checks {
            println!(
                "{} {} {}: {}",
                if c.passed { "PASS" } else { "FAIL" },
                d.metric,
                c.name,
                c.detail
            );
            failed += usize::from(!c.passed);
        }
    }
    failed
}

fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "alpha must be in (0, 1), got {alpha}"
        )))
    }
}

fn run_config(args: RunArgs) -> Result<(RunConfig, Option<u64>), CliError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if args.manifest.is_some() {
        cfg.manifest = args.manifest;
        cfg.synthetic = false;
    }
    if args.synthetic {
        cfg.synthetic = true;
        cfg.manifest = None;
    }
    macro_rules! set {
        ($($field:ident <- $value:expr),*) => {$(if let Some(v) = $value { cfg.$field = v; })*};
    }
    set!(images_per_class <- args.images_per_class, target_size <- args.size, metrics <- args.metrics,
         alpha <- args.alpha, tail <- args.tail, region <- args.region, grid <- args.grid);
    if args.out.is_some() {
        cfg.out = args.out;
    }
    Ok((cfg, args.seed))
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Prepare(a) => {
            let seed = resolve_seed(a.seed, None)?;
            if a.size < 8 {
                return Err(CliError::Usage(format!(
                    "--size must be >= 8, got {}",
                    a.size
                )));
            }
            let mvtec = a.mvtec.as_deref().zip(a.object.as_deref());
            let manifest = stage(
                "prepare",
                commands::load_input(a.manifest.as_deref(), mvtec),
            )?;
            let index = stage(
                "prepare",
                commands::prepare(&manifest, &a.out, a.size, seed),
            )?;
            println!(
                "prepared {} pairs ({} skipped) into {}",
                index.pairs.len(),
                index.skipped.len(),
                a.out.display()
            );
        }
        Command::Embed(a) => {
            let groups = stage("embed", commands::embed(&a.pairs, &a.out, a.grid))?;
            for g in groups {
                println!("{}", g.defect.display());
                println!("{}", g.normal.display());
                if let Some(b) = g.background {
                    println!("{}", b.display());
                }
            }
        }
        Command::Measure(a) => {
            check_alpha(a.alpha)?;
            if a.metrics.contains(&Metric::Rmi) {
                return Err(CliError::Usage(
                    "rmi is computed from crops; use the rmi subcommand".into(),
                ));
            }
            let report = stage(
                "measure",
                commands::measure(
                    &a.defect,
                    &a.normal,
                    a.background.as_deref(),
                    &a.metrics,
                    a.alpha,
                    a.tail,
                ),
            )?;
            stage("measure", report.write(&a.out))?;
            for r in &report.foreground {
                println!("{} foreground {}", r.metric, r.value);
            }
            for r in &report.background {
                println!("{} background {}", r.metric, r.value);
            }
            for t in &report.tests {
                println!(
                    "{} t={:.4} df={} p={:.4e} {}",
                    t.metric,
                    t.test.t,
                    t.test.df,
                    t.test.p_one_tailed,
                    if t.test.decision == Decision::RejectH0 {
                        "reject H0"
                    } else {
                        "fail to reject H0"
                    }
                );
            }
        }
        Command::Rmi(a) => {
            if a.region < 3 || a.region % 2 == 0 {
                return Err(CliError::Usage(format!(
                    "--region must be odd and >= 3, got {}",
                    a.region
                )));
            }
            let rows = stage("rmi", commands::rmi_rows(&a.pairs, a.region))?;
            stage("rmi", commands::write_rmi_csv(&rows, &a.out))?;
            if let Some(p) = &a.records {
                stage(
                    "rmi",
                    write_json(p, &commands::rmi_records(&rows, a.region)),
                )?;
            }
            println!("{} pairs", rows.len());
        }
        Command::Ttest(a) => {
            check_alpha(a.alpha)?;
            let r = stage(
                "ttest",
                commands::ttest(&a.group_a, &a.group_b, a.alpha, a.tail),
            )?;
            match &a.out {
                Some(p) => {
                    stage("ttest", write_json(p, &r))?;
                    println!(
                        "t={} df={} p={} decision={:?}",
                        r.t, r.df, r.p_one_tailed, r.decision
                    );
                }
                None => println!(
                    "{}",
                    serde_json::to_string_pretty(&r).expect("serializable")
                ),
            }
        }
        Command::Report(a) => {
            let records = stage("report", commands::collect_records(&a.input))?;
            for p in stage("report", commands::report(&records, &a.out, a.format))? {
                println!("{}", p.display());
            }
        }
        Command::ExportEmbeddings(a) => {
            let n = stage("export-embeddings", commands::export(&a.input, &a.out))?;
            println!("{n} rows written to {}", a.out.display());
        }
        Command::VerifyBounds(a) => {
            let diags = stage("verify-bounds", commands::verify_file(&a.input))?;
            let failed = print_diagnostics(&diags);
            if failed > 0 {
                return Err(CliError::BoundsFailed(failed));
            }
        }
        Command::Run(a) => {
            let (cfg, seed) = run_config(a)?;
            let summary = pipeline::run_pipeline(&cfg, seed)?;
            println!(
                "run: {} pairs, {} groups measured, artifacts in {}",
                summary.pairs,
                summary.groups_measured,
                summary.out.display()
            );
            if summary.bound_failures > 0 {
                return Err(CliError::BoundsFailed(summary.bound_failures));
            }
        }
        Command::Synth(a) => {
            let mut cfg = SynthConfig {
                images_per_class: a.images_per_class,
                good_images: a.good,
                size: a.size,
                seed: resolve_seed(a.seed, None)?,
                ..Default::default()
            };
            if let Some(c) = a.classes {
                cfg.classes = c;
            }
            let m = stage("synth", repgap_core::synth::generate(&cfg, &a.out))?;
            println!(
                "{} images, manifest at {}",
                m.records.len(),
                a.out.join("manifest.json").display()
            );
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
