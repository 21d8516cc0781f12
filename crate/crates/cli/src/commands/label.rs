use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::Context;
use log::{error, info, warn};
use rayon::prelude::*;

use indusite::analytics::dataset_summary;
use indusite::dataset::{attach_labels, Catalog, LabelOptions};
use indusite::ntl::NtlGrid;
use indusite::period::YearMonth;

use crate::config::{echo_config, RunConfig};
use crate::output::{num, write_csv};
use crate::{pool, Outcome};

/// Every `*.raster` radiance grid in `dir`, keyed by its period.
pub fn load_ntl_library(dir: &Path) -> anyhow::Result<BTreeMap<YearMonth, NtlGrid>> {
    let mut lib = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(lib);
    }
    let mut paths: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "raster"))
        .collect();
    paths.sort();
    for p in paths {
        let g = NtlGrid::load(&p).with_context(|| format!("loading radiance grid {}", p.display()))?;
        if let Some(prev) = lib.insert(g.period(), g) {
            anyhow::bail!("two radiance grids for period {}", prev.period());
        }
    }
    Ok(lib)
}

pub fn run(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let dir = cfg.catalog_dir()?;
    let mut catalog = Catalog::load(dir)?;
    let library = load_ntl_library(&cfg.ntl_dir()?)?;
    let mask_root = cfg.mask_root()?;
    let opts = LabelOptions { side_m: cfg.side_m };

    let results: Vec<_> = pool(cfg)?.install(|| {
        catalog
            .observations
            .par_iter()
            .map(|o| attach_labels(std::slice::from_ref(o), &catalog.sites, &mask_root, &library, &opts))
            .collect()
    });

    let mut failures = 0;
    let mut warnings = 0;
    let mut updated = Vec::with_capacity(results.len());
    for (o, r) in catalog.observations.iter().zip(results) {
        match r {
            Ok(mut outcome) => {
                for w in &outcome.warnings {
                    warn!("{w}");
                }
                warnings += outcome.warnings.len();
                updated.push(outcome.observations.remove(0));
            }
            Err(e) => {
                failures += 1;
                error!("site {} acquired {}: {e}", o.site_id, o.acquired);
                updated.push(o.clone());
            }
        }
    }
    catalog.observations = updated;
    catalog.save(dir)?;

    let areas: Vec<f64> = catalog.observations.iter().filter_map(|o| o.area_label_m2).collect();
    let ntl = catalog.observations.iter().filter(|o| o.ntl_label.is_some()).count();
    let mut rows = vec![
        vec!["observations".to_string(), catalog.observations.len().to_string()],
        vec!["area_labels".into(), areas.len().to_string()],
        vec!["ntl_labels".into(), ntl.to_string()],
        vec!["warnings".into(), warnings.to_string()],
        vec!["failures".into(), failures.to_string()],
    ];
    let mut summary = format!(
        "observations {}, area labels {}, nighttime-light labels {ntl}, warnings {warnings}, failures {failures}",
        catalog.observations.len(),
        areas.len()
    );
    if !areas.is_empty() {
        let s = dataset_summary(&areas, cfg.sd_convention())?;
        rows.push(vec!["area_mean_m2".into(), num(s.mean)]);
        rows.push(vec!["area_sd_m2".into(), num(s.sd)]);
        summary.push_str(&format!("; area {:.0} m2 (sd {:.0} m2)", s.mean, s.sd));
    }
    info!("labels written to {}", dir.display());

    let out = cfg.out_dir()?;
    write_csv(&out.join("label_summary.csv"), &["metric", "value"], rows)?;
    echo_config(&out, "label", cfg)?;
    Ok(Outcome {
        items: catalog.observations.len(),
        failures,
        summary,
    })
}
