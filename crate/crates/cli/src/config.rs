use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use indusite::analytics::{SdConvention, DEFAULT_CI_LEVEL};
use indusite::dataset::{write_atomic, DEFAULT_FRACTIONS};
use indusite::masks::DEFAULT_MIN_GROUP_IMAGES;
use indusite::raster::{DEFAULT_CROP_SIDE_M, DEFAULT_RESAMPLE_DIMS};

pub const RUN_CONFIG_FILE: &str = "run_config.json";

/// Settings shared by every subcommand. Loaded from `--config` JSON, then
/// overridden by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub catalog: Option<PathBuf>,
    /// Root for observation raster references; defaults to the catalog directory.
    pub rasters: Option<PathBuf>,
    /// Root for mask references; defaults to the catalog directory.
    pub masks: Option<PathBuf>,
    /// Directory of monthly radiance grids; defaults to `<catalog>/ntl`.
    pub ntl: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub side_m: f64,
    /// Resample target as (height, width).
    pub resample: (usize, usize),
    pub thresholds: Vec<f64>,
    pub fractions: [f64; 3],
    pub seed: u64,
    pub ci_level: f64,
    pub min_group_images: usize,
    pub sample_sd: bool,
    /// Worker threads; 0 picks the machine's parallelism.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            catalog: None,
            rasters: None,
            masks: None,
            ntl: None,
            out: None,
            side_m: DEFAULT_CROP_SIDE_M,
            resample: DEFAULT_RESAMPLE_DIMS,
            thresholds: vec![0.1, 0.3, 0.5],
            fractions: DEFAULT_FRACTIONS,
            seed: 0,
            ci_level: DEFAULT_CI_LEVEL,
            min_group_images: DEFAULT_MIN_GROUP_IMAGES,
            sample_sd: false,
            workers: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.side_m.is_finite() && self.side_m > 0.0) {
            bail!("side_m must be > 0, got {}", self.side_m);
        }
        if self.resample.0 == 0 || self.resample.1 == 0 {
            bail!("resample dims must be >= 1x1, got {:?}", self.resample);
        }
        if self.thresholds.is_empty() || self.thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            bail!("thresholds must be non-empty and lie in (0, 1], got {:?}", self.thresholds);
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            bail!("ci_level must lie in (0, 1), got {}", self.ci_level);
        }
        Ok(())
    }

    pub fn sd_convention(&self) -> SdConvention {
        if self.sample_sd {
            SdConvention::Sample
        } else {
            SdConvention::Population
        }
    }

    pub fn catalog_dir(&self) -> anyhow::Result<&Path> {
        self.catalog
            .as_deref()
            .context("--catalog is required for this command")
    }

    pub fn raster_root(&self) -> anyhow::Result<PathBuf> {
        match &self.rasters {
            Some(p) => Ok(p.clone()),
            None => Ok(self.catalog_dir()?.to_path_buf()),
        }
    }

    pub fn mask_root(&self) -> anyhow::Result<PathBuf> {
        match &self.masks {
            Some(p) => Ok(p.clone()),
            None => Ok(self.catalog_dir()?.to_path_buf()),
        }
    }

    pub fn ntl_dir(&self) -> anyhow::Result<PathBuf> {
        match &self.ntl {
            Some(p) => Ok(p.clone()),
            None => Ok(self.catalog_dir()?.join("ntl")),
        }
    }

    /// Output directory, falling back to the catalog directory.
    pub fn out_dir(&self) -> anyhow::Result<PathBuf> {
        match (&self.out, &self.catalog) {
            (Some(o), _) => Ok(o.clone()),
            (None, Some(c)) => Ok(c.clone()),
            (None, None) => bail!("--out is required for this command"),
        }
    }
}

#[derive(Serialize)]
struct Echo<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a RunConfig,
}

/// Records the effective configuration next to a command's outputs.
pub fn echo_config(dir: &Path, command: &str, config: &RunConfig) -> anyhow::Result<()> {
    let echo = Echo {
        tool: "indusite",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
    };
    let mut text = serde_json::to_string_pretty(&echo)?;
    text.push('\n');
    write_atomic(&dir.join(RUN_CONFIG_FILE), text.as_bytes())?;
    Ok(())
}
