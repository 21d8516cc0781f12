//! Batch front end for the `indusite` library.
//!
//! Every subcommand reads a [`RunConfig`] (defaults, then `--config` JSON,
//! then flags), writes its outputs plus an echo of that config, and reports
//! how many work items failed.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "indusite", version, about = "Industrial-site development measurement toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// JSON file mirroring the run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Catalog directory (sites.csv, observations.jsonl).
    #[arg(long, global = true)]
    pub catalog: Option<PathBuf>,
    #[arg(long, global = true)]
    pub rasters: Option<PathBuf>,
    #[arg(long, global = true)]
    pub masks: Option<PathBuf>,
    #[arg(long, global = true)]
    pub ntl: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// IoU thresholds, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Crop side in meters.
    #[arg(long, global = true)]
    pub side_m: Option<f64>,
    /// Resample target as HEIGHTxWIDTH.
    #[arg(long, global = true, value_parser = parse_dims)]
    pub resample: Option<(usize, usize)>,
    /// Train, validation and test fractions, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub ci_level: Option<f64>,
    #[arg(long, global = true)]
    pub min_group_images: Option<usize>,
    /// Report sample (n - 1) rather than population standard deviations.
    #[arg(long, global = true)]
    pub sample_sd: bool,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HEIGHTxWIDTH, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((p(h)?, p(w)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Area,
    Ntl,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert, crop and resample imagery listed in a jobs CSV.
    Convert {
        #[arg(long)]
        jobs: PathBuf,
    },
    /// Attach structural-area and nighttime-light labels to the catalog.
    Label,
    /// Average precision at each threshold, overall and by year.
    Eval {
        /// CSV with columns pred,truth,year (paths relative to the CSV).
        #[arg(long)]
        pairs: PathBuf,
    },
    /// Site-atomic train/validation/test split.
    Split,
    /// Export one partition as resampled model inputs with a manifest.
    Bundle {
        #[arg(long)]
        partition: String,
        #[arg(long)]
        splits: Option<PathBuf>,
    },
    /// Yearly trend, per-site change, bridge fit and optional L1 score.
    Trend {
        #[arg(long, value_enum, default_value_t = Metric::Area)]
        metric: Metric,
        /// Restrict to one partition of the split.
        #[arg(long)]
        partition: Option<String>,
        #[arg(long)]
        splits: Option<PathBuf>,
        /// CSV with columns site_id,acquired,predicted_area_m2 to score against labels.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Write a synthetic catalog with known growth.
    Synth(SynthArgs),
    /// Corpus statistics for a catalog.
    Report,
}

#[derive(Debug, Args, Default)]
pub struct SynthArgs {
    #[arg(long)]
    pub sites: Option<usize>,
    /// Year range FIRST-LAST or a comma list.
    #[arg(long)]
    pub years: Option<String>,
    #[arg(long)]
    pub base_area: Option<f64>,
    #[arg(long)]
    pub mean_growth: Option<f64>,
    #[arg(long)]
    pub growth_sd: Option<f64>,
    #[arg(long)]
    pub jitter_sd: Option<f64>,
    /// Range LO,HI of per-instance prediction IoUs.
    #[arg(long, value_delimiter = ',')]
    pub prediction_iou: Option<Vec<f64>>,
    #[arg(long)]
    pub grid_px: Option<usize>,
    #[arg(long)]
    pub pixel_size_m: Option<f64>,
}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Outcome {
    pub items: usize,
    pub failures: usize,
    /// One-line human summary, printed by the binary.
    pub summary: String,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures == 0 {
            0
        } else {
            1
        }
    }
}

impl CommonArgs {
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = &self.$f { c.$f = Some(v.clone()); } )* };
        }
        take!(catalog, rasters, masks, ntl, out);
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.thresholds {
            c.thresholds = v.clone();
        }
        if let Some(v) = self.side_m {
            c.side_m = v;
        }
        if let Some(v) = self.resample {
            c.resample = v;
        }
        if let Some(v) = &self.fractions {
            if v.len() != 3 {
                bail!("--fractions needs 3 values, got {}", v.len());
            }
            c.fractions = [v[0], v[1], v[2]];
        }
        if let Some(v) = self.ci_level {
            c.ci_level = v;
        }
        if let Some(v) = self.min_group_images {
            c.min_group_images = v;
        }
        if self.sample_sd {
            c.sample_sd = true;
        }
        if let Some(v) = self.workers {
            c.workers = v;
        }
        c.validate()?;
        Ok(c)
    }
}

pub fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let cfg = cli.common.resolve()?;
    match cli.command {
        Command::Convert { jobs } => commands::convert::run(&cfg, &jobs),
        Command::Label => commands::label::run(&cfg),
        Command::Eval { pairs } => commands::eval::run(&cfg, &pairs),
        Command::Split => commands::split::run(&cfg),
        Command::Bundle { partition, splits } => {
            commands::bundle::run(&cfg, &partition, splits.as_deref())
        }
        Command::Trend {
            metric,
            partition,
            splits,
            predictions,
        } => commands::trend::run(
            &cfg,
            metric,
            partition.as_deref(),
            splits.as_deref(),
            predictions.as_deref(),
        ),
        Command::Synth(args) => commands::synth::run(&cfg, &args),
        Command::Report => commands::report::run(&cfg),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> anyhow::Result<Outcome>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).context("parsing arguments")?;
    run(cli)
}

/// Bounded pool for per-item work.
pub(crate) fn pool(cfg: &RunConfig) -> anyhow::Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .context("building worker pool")
}
