use anyhow::{bail, Context};

use indusite::synth::{write_fleet, FleetSpec};

use crate::config::{echo_config, RunConfig};
use crate::{Outcome, SynthArgs};

fn parse_years(s: &str) -> anyhow::Result<Vec<i32>> {
    let years: Vec<i32> = match s.split_once('-') {
        Some((a, b)) => (a.trim().parse()?..=b.trim().parse()?).collect(),
        None => s
            .split(',')
            .map(|y| y.trim().parse().with_context(|| format!("year {y:?}")))
            .collect::<anyhow::Result<_>>()?,
    };
    if years.len() < 2 {
        bail!("need at least two years, got {s:?}");
    }
    Ok(years)
}

pub fn run(cfg: &RunConfig, args: &SynthArgs) -> anyhow::Result<Outcome> {
    let out = cfg.out_dir()?;
    let mut spec = FleetSpec {
        seed: cfg.seed,
        ..FleetSpec::default()
    };
    if let Some(v) = args.sites {
        spec.sites = v;
    }
    if let Some(v) = &args.years {
        spec.years = parse_years(v)?;
    }
    if let Some(v) = args.base_area {
        spec.base_area_m2 = v;
    }
    if let Some(v) = args.mean_growth {
        spec.mean_growth_m2_per_year = v;
    }
    if let Some(v) = args.growth_sd {
        spec.growth_sd_m2_per_year = v;
    }
    if let Some(v) = args.jitter_sd {
        spec.jitter_sd_m2 = v;
    }
    if let Some(v) = &args.prediction_iou {
        match v[..] {
            [x] => spec.prediction_iou = (x, x),
            [lo, hi] => spec.prediction_iou = (lo, hi),
            _ => bail!("--prediction-iou takes one value or LO,HI"),
        }
    }
    if let Some(v) = args.grid_px {
        spec.grid_px = v;
    }
    if let Some(v) = args.pixel_size_m {
        spec.pixel_size_m = v;
    }
    let truth = write_fleet(&spec, &out)?;
    let summary = format!(
        "{} sites x {} years written to {}; injected mean change {:.1} m2",
        spec.sites,
        spec.years.len(),
        out.display(),
        truth.injected_mean_change_m2
    );
    echo_config(&out, "synth", cfg)?;
    Ok(Outcome {
        items: spec.sites * spec.years.len(),
        failures: 0,
        summary,
    })
}
