use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use chrono::NaiveDate;
use log::{error, info};
use rayon::prelude::*;
use serde::Deserialize;

use indusite::raster::{
    crop_window, import_image, load_raster, resample_bilinear, rgb_to_luminance, save_raster,
    BandKind, GeoTransform, ImportedImage, RasterGrid,
};

use super::{parent_dir, resolve};
use crate::config::{echo_config, RunConfig};
use crate::output::write_csv;
use crate::{pool, Outcome};

/// One conversion job. `green`/`blue` turn `input` into the red band of a
/// three-file triple. The georeferencing columns are only read for PNG/PGM
/// inputs, which carry none of their own.
#[derive(Debug, Clone, Deserialize)]
struct Job {
    output: String,
    input: String,
    #[serde(default)]
    green: Option<String>,
    #[serde(default)]
    blue: Option<String>,
    #[serde(default)]
    center_lon: Option<f64>,
    #[serde(default)]
    center_lat: Option<f64>,
    #[serde(default)]
    origin_lon: Option<f64>,
    #[serde(default)]
    origin_lat: Option<f64>,
    #[serde(default)]
    pixel_size_m: Option<f64>,
    #[serde(default)]
    acquired: Option<NaiveDate>,
}

fn is_container(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "raster")
}

fn load_any(path: &Path, job: &Job) -> anyhow::Result<ImportedImage> {
    if is_container(path) {
        return Ok(ImportedImage::Gray(load_raster(path)?));
    }
    let (Some(lon), Some(lat), Some(px), Some(date)) =
        (job.origin_lon, job.origin_lat, job.pixel_size_m, job.acquired)
    else {
        bail!("{} has no georeferencing; origin_lon, origin_lat, pixel_size_m and acquired are required", path.display());
    };
    Ok(import_image(path, GeoTransform::wgs84(lon, lat, px, px)?, date)?)
}

fn band(path: &Path, job: &Job) -> anyhow::Result<RasterGrid> {
    match load_any(path, job)? {
        ImportedImage::Gray(g) => Ok(g),
        ImportedImage::Rgb(_) => bail!("{} is a color image, expected one band", path.display()),
    }
}

fn convert_one(cfg: &RunConfig, base: &Path, out: &Path, job: &Job) -> anyhow::Result<(usize, usize)> {
    let input = resolve(base, &job.input);
    let pan = match (&job.green, &job.blue) {
        (Some(g), Some(b)) => {
            let r = band(&input, job)?;
            let g = band(&resolve(base, g), job)?;
            let b = band(&resolve(base, b), job)?;
            rgb_to_luminance(&r, &g, &b)?
        }
        (None, None) => match load_any(&input, job)? {
            ImportedImage::Rgb([r, g, b]) => rgb_to_luminance(&r, &g, &b)?,
            ImportedImage::Gray(g) if g.band_kind() == BandKind::Rgb => {
                bail!("{} is a single color band; give green and blue", input.display())
            }
            ImportedImage::Gray(g) => g,
        },
        _ => bail!("green and blue must be given together"),
    };
    let cropped = match (job.center_lon, job.center_lat) {
        (Some(lon), Some(lat)) => crop_window(&pan, lon, lat, cfg.side_m)?,
        (None, None) => pan,
        _ => bail!("center_lon and center_lat must be given together"),
    };
    let (h, w) = cfg.resample;
    let result = resample_bilinear(&cropped, h, w)?;
    save_raster(&result, &out.join(&job.output))?;
    Ok((h, w))
}

pub fn run(cfg: &RunConfig, jobs_path: &Path) -> anyhow::Result<Outcome> {
    let out = cfg.out.clone().context("--out is required for convert")?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let base = parent_dir(jobs_path);
    let mut rdr = csv::Reader::from_path(jobs_path)
        .with_context(|| format!("reading jobs {}", jobs_path.display()))?;
    let jobs: Vec<Job> = rdr
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.with_context(|| format!("jobs CSV row {}", i + 2)))
        .collect::<anyhow::Result<_>>()?;

    let results: Vec<anyhow::Result<(usize, usize)>> =
        pool(cfg)?.install(|| jobs.par_iter().map(|j| convert_one(cfg, &base, &out, j)).collect());

    let mut failures = 0;
    let mut rows = Vec::with_capacity(jobs.len());
    for (job, r) in jobs.iter().zip(results) {
        match r {
            Ok((h, w)) => {
                info!("converted {} -> {}", job.input, job.output);
                rows.push(vec![job.output.clone(), "ok".into(), String::new(), h.to_string(), w.to_string()]);
            }
            Err(e) => {
                failures += 1;
                error!("failed {}: {e:#}", job.input);
                rows.push(vec![job.output.clone(), "failed".into(), format!("{e:#}"), String::new(), String::new()]);
            }
        }
    }
    write_csv(&out.join("convert_results.csv"), &["output", "status", "message", "height", "width"], rows)?;
    let summary = format!("{} of {} jobs converted", jobs.len() - failures, jobs.len());
    echo_config(&out, "convert", cfg)?;
    Ok(Outcome {
        items: jobs.len(),
        failures,
        summary,
    })
}
