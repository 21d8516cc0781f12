use std::collections::HashMap;
use std::path::Path;

use anyhow::Context;
use chrono::{Datelike, NaiveDate};
use log::{info, warn};
use serde::Deserialize;

use indusite::analytics::{dataset_summary, l1_score, ols_fit, site_change, yearly_trend, SdConvention};
use indusite::dataset::{Catalog, Observation, Partition, SplitAssignment, SPLITS_FILE};
use indusite::Error;

use crate::config::{echo_config, RunConfig};
use crate::output::{num, opt, trend_svg, write_csv};
use crate::{Metric, Outcome};

#[derive(Debug, Deserialize)]
struct Prediction {
    site_id: String,
    acquired: NaiveDate,
    predicted_area_m2: f64,
}

fn value(o: &Observation, metric: Metric) -> Option<f64> {
    match metric {
        Metric::Area => o.area_label_m2,
        Metric::Ntl => o.ntl_label,
    }
}

pub fn run(
    cfg: &RunConfig,
    metric: Metric,
    partition: Option<&str>,
    splits: Option<&Path>,
    predictions: Option<&Path>,
) -> anyhow::Result<Outcome> {
    let dir = cfg.catalog_dir()?;
    let mut catalog = Catalog::load(dir)?;
    if let Some(p) = partition {
        let p: Partition = p.parse()?;
        let path = splits.map(Path::to_path_buf).unwrap_or_else(|| dir.join(SPLITS_FILE));
        let split = SplitAssignment::load(&path).with_context(|| format!("loading split {}", path.display()))?;
        catalog.observations.retain(|o| split.partition_of(&o.site_id) == Some(p));
        catalog.sites.retain(|s| split.partition_of(&s.id) == Some(p));
    }
    let out = cfg.out_dir()?;

    let points: Vec<(i32, f64)> = catalog
        .observations
        .iter()
        .filter_map(|o| value(o, metric).map(|v| (o.acquired.year(), v)))
        .collect();
    let unlabeled = catalog.observations.len() - points.len();
    if unlabeled > 0 {
        warn!("{unlabeled} observation(s) without a label were skipped");
    }
    let report = yearly_trend(&points, cfg.ci_level)?;
    let rows = report.per_year.iter().map(|y| {
        vec![
            y.year.to_string(),
            num(y.mean),
            opt(y.ci.map(|c| c.0)),
            opt(y.ci.map(|c| c.1)),
            y.n.to_string(),
            num(report.fit.slope),
            num(report.pct_change_per_year),
            num(report.pct_change_total),
        ]
    });
    write_csv(
        &out.join("trend_yearly.csv"),
        &["year", "mean", "ci_low", "ci_high", "n", "slope", "pct_per_year", "pct_total"],
        rows,
    )?;
    let (title, unit) = match metric {
        Metric::Area => ("Mean structural area by year", "structural area (m2)"),
        Metric::Ntl => ("Mean nighttime-light radiance by year", "radiance (nW/cm2/sr)"),
    };
    indusite::dataset::write_atomic(&out.join("trend.svg"), trend_svg(&report, title, unit).as_bytes())?;

    let mut changes = Vec::new();
    for mut s in catalog.series() {
        s.observations.retain(|o| value(o, metric).is_some());
        let values: Vec<f64> = s.observations.iter().filter_map(|o| value(o, metric)).collect();
        match site_change(&s, &values) {
            Ok(c) => changes.push(c),
            Err(e) => info!("site {} skipped for change: {e}", s.site.id),
        }
    }
    write_csv(
        &out.join("site_changes.csv"),
        &["site_id", "oldest", "newest", "oldest_value", "newest_value", "delta"],
        changes.iter().map(|c| {
            vec![
                c.site_id.clone(),
                c.oldest.to_string(),
                c.newest.to_string(),
                num(c.oldest_value),
                num(c.newest_value),
                num(c.delta),
            ]
        }),
    )?;
    let deltas: Vec<f64> = changes.iter().map(|c| c.delta).collect();
    if deltas.len() >= 2 {
        let s = dataset_summary(&deltas, SdConvention::Sample)?;
        write_csv(
            &out.join("site_change_summary.csv"),
            &["sites", "mean_delta", "sd_delta", "se_delta"],
            [vec![
                s.count.to_string(),
                num(s.mean),
                num(s.sd),
                num(s.sd / (s.count as f64).sqrt()),
            ]],
        )?;
    }

    let bridge: Vec<(f64, f64)> = catalog
        .observations
        .iter()
        .filter_map(|o| Some((o.ntl_label?, o.area_label_m2?)))
        .collect();
    match ols_fit(&bridge) {
        Ok(f) => write_csv(
            &out.join("bridge_fit.csv"),
            &["slope", "intercept", "r_squared", "n"],
            [vec![num(f.slope), num(f.intercept), num(f.r_squared), f.n.to_string()]],
        )?,
        Err(e @ (Error::DegenerateFit(_) | Error::InvalidInput(_))) => {
            warn!("no bridge fit: {e}")
        }
        Err(e) => return Err(e.into()),
    }

    let mut failures = 0;
    if let Some(path) = predictions {
        let labels: HashMap<(&str, NaiveDate), f64> = catalog
            .observations
            .iter()
            .filter_map(|o| Some(((o.site_id.as_str(), o.acquired), o.area_label_m2?)))
            .collect();
        let mut pred = Vec::new();
        let mut truth = Vec::new();
        let mut unmatched = 0;
        let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        for (i, r) in rdr.deserialize::<Prediction>().enumerate() {
            match r {
                Ok(p) => match labels.get(&(p.site_id.as_str(), p.acquired)) {
                    Some(&t) => {
                        pred.push(p.predicted_area_m2);
                        truth.push(t);
                    }
                    None => unmatched += 1,
                },
                Err(e) => {
                    failures += 1;
                    log::error!("predictions row {}: {e}", i + 2);
                }
            }
        }
        if unmatched > 0 {
            warn!("{unmatched} prediction(s) had no labeled observation");
        }
        let l1 = l1_score(&pred, &truth)?;
        write_csv(
            &out.join("l1.csv"),
            &["n", "l1_m2", "unmatched"],
            [vec![pred.len().to_string(), num(l1), unmatched.to_string()]],
        )?;
    }

    let summary = format!(
        "{} years, slope {:.3}/yr, {:.3}%/yr, {:.3}% total over {}-{}",
        report.per_year.len(),
        report.fit.slope,
        report.pct_change_per_year,
        report.pct_change_total,
        report.first_year,
        report.last_year
    );
    echo_config(&out, "trend", cfg)?;
    Ok(Outcome {
        items: points.len(),
        failures,
        summary,
    })
}
