use std::collections::BTreeMap;

use chrono::Datelike;

use indusite::analytics::dataset_summary;
use indusite::dataset::{class_counts, Catalog};

use crate::config::{echo_config, RunConfig};
use crate::output::{num, write_csv};
use crate::Outcome;

pub fn run(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let catalog = Catalog::load(cfg.catalog_dir()?)?;
    let out = cfg.out_dir()?;
    let mut rows = vec![
        vec!["sites".to_string(), catalog.sites.len().to_string()],
        vec!["observations".into(), catalog.observations.len().to_string()],
    ];
    for (class, n) in class_counts(&catalog.sites) {
        rows.push(vec![format!("sites_{class}"), n.to_string()]);
    }
    let counts: Vec<f64> = catalog.image_counts().iter().map(|c| c.1 as f64).collect();
    if !counts.is_empty() {
        let s = dataset_summary(&counts, cfg.sd_convention())?;
        rows.push(vec!["images_per_site_mean".into(), num(s.mean)]);
        rows.push(vec!["images_per_site_max".into(), num(counts.iter().cloned().fold(0.0, f64::max))]);
    }
    let labeled = |f: fn(&indusite::dataset::Observation) -> Option<f64>| -> Vec<f64> {
        catalog.observations.iter().filter_map(f).collect()
    };
    for (name, values) in [
        ("area_m2", labeled(|o| o.area_label_m2)),
        ("ntl", labeled(|o| o.ntl_label)),
        ("resolution_m", labeled(|o| Some(o.resolution_m))),
    ] {
        rows.push(vec![format!("{name}_count"), values.len().to_string()]);
        if !values.is_empty() {
            let s = dataset_summary(&values, cfg.sd_convention())?;
            rows.push(vec![format!("{name}_mean"), num(s.mean)]);
            rows.push(vec![format!("{name}_sd"), num(s.sd)]);
        }
    }
    write_csv(&out.join("corpus_report.csv"), &["metric", "value"], rows)?;

    let mut by_year: BTreeMap<i32, (usize, usize, usize)> = BTreeMap::new();
    for o in &catalog.observations {
        let e = by_year.entry(o.acquired.year()).or_default();
        e.0 += 1;
        e.1 += o.area_label_m2.is_some() as usize;
        e.2 += o.ntl_label.is_some() as usize;
    }
    write_csv(
        &out.join("observations_by_year.csv"),
        &["year", "observations", "area_labels", "ntl_labels"],
        by_year
            .into_iter()
            .map(|(y, (n, a, l))| vec![y.to_string(), n.to_string(), a.to_string(), l.to_string()]),
    )?;
    echo_config(&out, "report", cfg)?;
    let summary = format!("{} sites, {} observations", catalog.sites.len(), catalog.observations.len());
    Ok(Outcome {
        items: catalog.observations.len(),
        failures: 0,
        summary,
    })
}
