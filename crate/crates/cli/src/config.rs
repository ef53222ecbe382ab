use std::path::{Path, PathBuf};

use repgap_core::metrics::DEFAULT_REGION;
use repgap_core::pixelfeat::DEFAULT_GRID;
use repgap_core::{Metric, Tail, DEFAULT_SEED, DEFAULT_TARGET_SIZE};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SEED_ENV: &str = "REPGAP_SEED";

/// Settings of a full pipeline run. Loaded from JSON; command-line flags
/// override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub target_size: u32,
    pub metrics: Vec<Metric>,
    pub alpha: f64,
    pub tail: Tail,
    pub region: usize,
    pub grid: usize,
    pub manifest: Option<PathBuf>,
    /// Generate the bundled synthetic fixture instead of reading a manifest.
    pub synthetic: bool,
    pub images_per_class: usize,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            target_size: DEFAULT_TARGET_SIZE,
            metrics: Metric::ALL.to_vec(),
            alpha: 0.05,
            tail: Tail::Lower,
            region: DEFAULT_REGION,
            grid: DEFAULT_GRID,
            manifest: None,
            synthetic: false,
            images_per_class: 10,
            out: None,
        }
    }
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::stage("config", repgap_core::Error::io(path, e)))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.manifest, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::Usage(format!(
                "alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.target_size < 8 {
            return Err(CliError::Usage(format!(
                "target size must be >= 8, got {}",
                self.target_size
            )));
        }
        if self.metrics.is_empty() {
            return Err(CliError::Usage("metrics must not be empty".into()));
        }
        if self.grid == 0 || self.grid as u32 > self.target_size {
            return Err(CliError::Usage(format!(
                "grid {} does not fit target size",
                self.grid
            )));
        }
        Ok(())
    }
}

/// Flag, then `REPGAP_SEED`, then config, then the default.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Ok(v) = std::env::var(SEED_ENV) {
        return v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer")));
    }
    Ok(config.unwrap_or(DEFAULT_SEED))
}
