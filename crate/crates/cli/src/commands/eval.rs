use std::fs;
use std::path::Path;

use anyhow::Context;
use log::{error, warn};
use rayon::prelude::*;
use serde::Deserialize;

use indusite::masks::{ap_grouped, pooled_counts, precision_counts, EvalItem, MaskSet};

use super::{parent_dir, resolve};
use crate::config::{echo_config, RunConfig};
use crate::output::{num, opt, write_csv};
use crate::{pool, Outcome};

#[derive(Debug, Deserialize)]
struct Pair {
    pred: String,
    truth: String,
    year: i32,
}

pub fn run(cfg: &RunConfig, pairs_path: &Path) -> anyhow::Result<Outcome> {
    let out = cfg.out.clone().context("--out is required for eval")?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let base = parent_dir(pairs_path);
    let pairs: Vec<Pair> = csv::Reader::from_path(pairs_path)
        .with_context(|| format!("reading pairs {}", pairs_path.display()))?
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.with_context(|| format!("pairs CSV row {}", i + 2)))
        .collect::<anyhow::Result<_>>()?;

    let loaded: Vec<anyhow::Result<EvalItem>> = pool(cfg)?.install(|| {
        pairs
            .par_iter()
            .map(|p| {
                let preds = MaskSet::load(&resolve(&base, &p.pred))?;
                let truths = MaskSet::load(&resolve(&base, &p.truth))?;
                // Validates grid agreement up front so failures stay per item.
                precision_counts(&preds, &truths, 1.0)?;
                Ok(EvalItem { preds, truths, year: p.year })
            })
            .collect()
    });
    let mut items = Vec::with_capacity(pairs.len());
    let mut kept = Vec::with_capacity(pairs.len());
    let mut failures = 0;
    for (p, r) in pairs.iter().zip(loaded) {
        match r {
            Ok(item) => {
                if item.preds.is_empty() {
                    warn!("{}: no predictions; precision undefined for this image", p.pred);
                }
                items.push(item);
                kept.push(p);
            }
            Err(e) => {
                failures += 1;
                error!("{} / {}: {e:#}", p.pred, p.truth);
            }
        }
    }

    let mut overall = Vec::new();
    let mut by_year = Vec::new();
    let mut per_image = Vec::new();
    let zero = items.iter().filter(|i| i.preds.is_empty()).count();
    for &t in &cfg.thresholds {
        let c = pooled_counts(&items, t)?;
        overall.push(vec![
            num(t),
            items.len().to_string(),
            zero.to_string(),
            c.tp.to_string(),
            c.fp.to_string(),
            opt(c.ap().ok()),
        ]);
        for g in ap_grouped(&items, t, cfg.min_group_images)? {
            by_year.push(vec![
                num(t),
                g.year.to_string(),
                g.images.to_string(),
                g.zero_prediction_images.to_string(),
                g.counts.tp.to_string(),
                g.counts.fp.to_string(),
                opt(g.ap),
                g.below_minimum.to_string(),
            ]);
        }
        for (item, p) in items.iter().zip(&kept) {
            let c = precision_counts(&item.preds, &item.truths, t)?;
            per_image.push(vec![
                num(t),
                p.pred.clone(),
                p.truth.clone(),
                p.year.to_string(),
                c.tp.to_string(),
                c.fp.to_string(),
                opt(c.ap().ok()),
            ]);
        }
    }
    write_csv(
        &out.join("ap_overall.csv"),
        &["threshold", "images", "zero_prediction_images", "tp", "fp", "ap"],
        overall,
    )?;
    write_csv(
        &out.join("ap_by_year.csv"),
        &["threshold", "year", "images", "zero_prediction_images", "tp", "fp", "ap", "below_minimum"],
        by_year,
    )?;
    write_csv(
        &out.join("ap_by_image.csv"),
        &["threshold", "pred", "truth", "year", "tp", "fp", "ap"],
        per_image,
    )?;
    let summary = format!("{} pairs at {} thresholds, {failures} failures", pairs.len(), cfg.thresholds.len());
    echo_config(&out, "eval", cfg)?;
    Ok(Outcome {
        items: pairs.len(),
        failures,
        summary,
    })
}
