//! Synthetic worlds with exactly known answers.
//!
//! Scenes are axis-aligned, non-overlapping rectangles rendered into a
//! panchromatic raster. Masks come from geometry (pixel-center rasterization),
//! never from thresholding the noisy image.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_atomic, Catalog, Observation, Site, SiteClass, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::masks::{iou, InstanceMask, MaskSet, Provenance};
use crate::ntl::{cell_fractions, eligible, Footprint, NtlGrid};
use crate::period::YearMonth;
use crate::raster::{save_raster, BandKind, GeoTransform, RasterGrid, DEFAULT_CROP_SIDE_M};

/// Placement attempts per rectangle before giving up.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// Largest allowed distance between achieved and requested IoU.
pub const IOU_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub grid_h: usize,
    pub grid_w: usize,
    pub pixel_size_m: f64,
    /// Inclusive range of rectangle counts.
    pub count: (usize, usize),
    /// Inclusive range of rectangle side lengths, meters.
    pub rect_side_m: (f64, f64),
    pub background: f64,
    pub structure: f64,
    pub noise_sd: f64,
    /// Minimum free pixels between rectangles.
    pub min_gap_px: usize,
    /// Place rectangle edges off the pixel lattice.
    pub subpixel: bool,
    pub center_lon: f64,
    pub center_lat: f64,
    pub acquired: NaiveDate,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            grid_h: 80,
            grid_w: 80,
            pixel_size_m: 10.0,
            count: (1, 6),
            rect_side_m: (30.0, 200.0),
            background: 0.2,
            structure: 0.8,
            noise_sd: 0.05,
            min_gap_px: 1,
            subpixel: false,
            center_lon: 0.0,
            center_lat: 0.0,
            acquired: NaiveDate::from_ymd_opt(2016, 7, 1).expect("valid date"),
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn extent_m2(&self) -> f64 {
        self.grid_h as f64 * self.grid_w as f64 * self.pixel_size_m * self.pixel_size_m
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Synth(m));
        if self.grid_h == 0 || self.grid_w == 0 {
            return bad(format!("grid must be at least 1x1, got {}x{}", self.grid_h, self.grid_w));
        }
        if !(self.pixel_size_m.is_finite() && self.pixel_size_m > 0.0) {
            return bad(format!("pixel size must be > 0, got {}", self.pixel_size_m));
        }
        if self.count.0 > self.count.1 {
            return bad(format!("count range {:?} is empty", self.count));
        }
        let (lo, hi) = self.rect_side_m;
        if !(lo.is_finite() && hi.is_finite() && lo >= self.pixel_size_m && lo <= hi) {
            return bad(format!(
                "rectangle sides {:?} m must satisfy pixel size ({} m) <= min <= max",
                self.rect_side_m, self.pixel_size_m
            ));
        }
        if self.count.1 > 0 && (lo / self.pixel_size_m > self.grid_h.min(self.grid_w) as f64) {
            return bad(format!("smallest rectangle ({lo} m) does not fit the grid"));
        }
        for (name, v) in [("background", self.background), ("structure", self.structure)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} level {v} outside [0, 1]"));
            }
        }
        if self.background == self.structure {
            return bad("structure level must differ from background".into());
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return bad(format!("noise sd must be >= 0, got {}", self.noise_sd));
        }
        Ok(())
    }
}

/// Axis-aligned rectangle in pixel-edge coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub row0: f64,
    pub col0: f64,
    pub rows: f64,
    pub cols: f64,
}

impl Rect {
    /// Half-open index range of pixels whose centers lie in `[lo, lo + len)`.
    fn span(lo: f64, len: f64) -> (usize, usize) {
        let a = (lo - 0.5).ceil().max(0.0) as usize;
        let b = (lo + len - 0.5).ceil().max(0.0) as usize;
        (a, b.max(a))
    }

    pub fn rasterize(&self, grid_h: usize, grid_w: usize) -> Result<InstanceMask> {
        let (r0, r1) = Rect::span(self.row0, self.rows);
        let (c0, c1) = Rect::span(self.col0, self.cols);
        InstanceMask::rect(grid_h, grid_w, r0, c0, r1.min(grid_h) - r0, c1.min(grid_w) - c0)
    }

    pub fn area_px(&self) -> f64 {
        self.rows * self.cols
    }

    pub fn perimeter_px(&self) -> f64 {
        2.0 * (self.rows + self.cols)
    }

    fn clear_of(&self, other: &Rect, gap: f64) -> bool {
        self.row0 + self.rows + gap <= other.row0
            || other.row0 + other.rows + gap <= self.row0
            || self.col0 + self.cols + gap <= other.col0
            || other.col0 + other.cols + gap <= self.col0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub raster: RasterGrid,
    pub masks: MaskSet,
    pub rects: Vec<Rect>,
    /// Geometric area of the rectangles before rasterization.
    pub exact_area_m2: f64,
}

impl Scene {
    /// Worst-case rasterization error of the mask area, in square meters.
    pub fn quantization_bound_m2(&self) -> f64 {
        let px = self.raster.transform().pixel_size_x_m * self.raster.transform().pixel_size_y_m;
        self.rects.iter().map(|r| r.perimeter_px()).sum::<f64>() * px
    }
}

/// Renders rectangles into a noisy raster plus their exact masks.
pub fn render_scene(spec: &SceneSpec, rects: &[Rect], rng: &mut ChaCha8Rng) -> Result<Scene> {
    let (h, w) = (spec.grid_h, spec.grid_w);
    let mut instances = Vec::with_capacity(rects.len());
    let mut values = vec![spec.background; h * w];
    for r in rects {
        let m = r.rasterize(h, w)?;
        for i in m.indices() {
            values[i] = spec.structure;
        }
        instances.push(m);
    }
    if spec.noise_sd > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sd)
            .map_err(|e| Error::Synth(format!("noise distribution: {e}")))?;
        for v in &mut values {
            *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
        }
    }
    let transform = GeoTransform::centered_on(
        spec.center_lon,
        spec.center_lat,
        h,
        w,
        spec.pixel_size_m,
        spec.pixel_size_m,
    )?;
    let raster = RasterGrid::new(h, w, values, BandKind::Panchromatic, spec.acquired, transform)?;
    let masks = MaskSet::new(h, w, instances, Provenance::GroundTruthGeocoded)?;
    let px2 = spec.pixel_size_m * spec.pixel_size_m;
    Ok(Scene {
        raster,
        masks,
        rects: rects.to_vec(),
        exact_area_m2: rects.iter().map(|r| r.area_px()).sum::<f64>() * px2,
    })
}

/// Random non-overlapping rectangles rendered into a scene. Deterministic per seed.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = rng.random_range(spec.count.0..=spec.count.1);
    let (h, w) = (spec.grid_h as f64, spec.grid_w as f64);
    let (lo, hi) = (
        spec.rect_side_m.0 / spec.pixel_size_m,
        spec.rect_side_m.1 / spec.pixel_size_m,
    );
    let gap = spec.min_gap_px as f64;
    let mut rects: Vec<Rect> = Vec::with_capacity(n);
    for k in 0..n {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let mut side = |limit: f64| -> f64 {
                let s = rng.random_range(lo..=hi.max(lo)).min(limit);
                if spec.subpixel { s } else { s.round().clamp(1.0, limit.floor()) }
            };
            let rows = side(h);
            let cols = side(w);
            let mut origin = |len: f64, limit: f64| -> f64 {
                let room = limit - len;
                if spec.subpixel {
                    rng.random_range(0.0..=room)
                } else {
                    rng.random_range(0..=room as usize) as f64
                }
            };
            let cand = Rect {
                row0: origin(rows, h),
                col0: origin(cols, w),
                rows,
                cols,
            };
            if rects.iter().all(|r| cand.clear_of(r, gap)) {
                rects.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Synth(format!(
                "could not place rectangle {} of {n} without overlap after {MAX_PLACEMENT_ATTEMPTS} attempts",
                k + 1
            )));
        }
    }
    render_scene(spec, &rects, &mut rng)
}

fn shift_mask(m: &InstanceMask, dr: isize, dc: isize) -> Option<InstanceMask> {
    let (h, w) = (m.grid_h() as isize, m.grid_w() as isize);
    let idx: Vec<usize> = m
        .indices()
        .filter_map(|i| {
            let (r, c) = ((i as isize) / w + dr, (i as isize) % w + dc);
            (r >= 0 && r < h && c >= 0 && c < w).then(|| (r * w + c) as usize)
        })
        .collect();
    InstanceMask::from_indices(m.grid_h(), m.grid_w(), idx).ok()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Move {
    Shift(isize, isize),
    /// Drop `k` outermost rows/columns on a side (0 top, 1 bottom, 2 left, 3 right).
    Trim(usize, usize),
    /// Sweep the mask `k` pixels toward a side.
    Grow(usize, usize),
}

/// Row/column footprint of a mask, used to score moves without building them.
struct Profile {
    n: usize,
    row_counts: Vec<usize>,
    col_counts: Vec<usize>,
    rmin: usize,
    rmax: usize,
    cmin: usize,
    cmax: usize,
}

impl Profile {
    fn of(m: &InstanceMask) -> Profile {
        let w = m.grid_w();
        let mut row_counts = vec![0; m.grid_h()];
        let mut col_counts = vec![0; w];
        for i in m.indices() {
            row_counts[i / w] += 1;
            col_counts[i % w] += 1;
        }
        let first = |v: &[usize]| v.iter().position(|&c| c > 0).unwrap_or(0);
        let last = |v: &[usize]| v.iter().rposition(|&c| c > 0).unwrap_or(0);
        Profile {
            n: m.pixel_count(),
            rmin: first(&row_counts),
            rmax: last(&row_counts),
            cmin: first(&col_counts),
            cmax: last(&col_counts),
            row_counts,
            col_counts,
        }
    }

    fn rows(&self) -> usize {
        self.rmax - self.rmin + 1
    }

    fn cols(&self) -> usize {
        self.cmax - self.cmin + 1
    }

    fn shift_in_bounds(&self, dr: isize, dc: isize) -> bool {
        let h = self.row_counts.len() as isize;
        let w = self.col_counts.len() as isize;
        self.rmin as isize + dr >= 0
            && self.rmax as isize + dr < h
            && self.cmin as isize + dc >= 0
            && self.cmax as isize + dc < w
    }
}

fn moves(p: &Profile, tier: usize) -> Vec<Move> {
    let (rr, rc) = (p.rows() as isize + 1, p.cols() as isize + 1);
    let mut out = Vec::new();
    match tier {
        0 => {
            out.push(Move::Shift(0, 0));
            out.extend((-rr..=rr).filter(|&d| d != 0).map(|d| Move::Shift(d, 0)));
            out.extend((-rc..=rc).filter(|&d| d != 0).map(|d| Move::Shift(0, d)));
            for side in 0..4 {
                let span = if side < 2 { p.rows() } else { p.cols() };
                out.extend((1..span).map(|k| Move::Trim(side, k)));
            }
        }
        1 => {
            for side in 0..4 {
                let span = if side < 2 { p.rows() } else { p.cols() };
                out.extend((1..=span).map(|k| Move::Grow(side, k)));
            }
        }
        _ => {
            for dr in (-rr..=rr).filter(|&d| d != 0) {
                for dc in (-rc..=rc).filter(|&d| d != 0) {
                    out.push(Move::Shift(dr, dc));
                }
            }
        }
    }
    out
}

fn apply(m: &InstanceMask, p: &Profile, mv: Move) -> Option<InstanceMask> {
    let w = m.grid_w();
    match mv {
        Move::Shift(dr, dc) => shift_mask(m, dr, dc),
        Move::Trim(side, k) => {
            let keep = |i: &usize| {
                let (r, c) = (i / w, i % w);
                match side {
                    0 => r >= p.rmin + k,
                    1 => r + k <= p.rmax,
                    2 => c >= p.cmin + k,
                    _ => c + k <= p.cmax,
                }
            };
            InstanceMask::from_indices(m.grid_h(), w, m.indices().filter(keep)).ok()
        }
        Move::Grow(side, k) => {
            let (dr, dc): (isize, isize) = [(-1, 0), (1, 0), (0, -1), (0, 1)][side];
            let mut runs: Vec<(usize, usize)> = m.runs().to_vec();
            for s in 1..=k as isize {
                runs.extend_from_slice(shift_mask(m, dr * s, dc * s)?.runs());
            }
            InstanceMask::from_runs(m.grid_h(), w, runs).ok()
        }
    }
}

/// Pixels shared by `runs` and the same runs offset by `o` indices.
fn self_overlap(runs: &[(usize, usize)], o: isize) -> usize {
    let (mut i, mut j, mut total) = (0, 0, 0);
    while i < runs.len() && j < runs.len() {
        let (sa, ea) = (runs[i].0 as isize, (runs[i].0 + runs[i].1) as isize);
        let (sb, eb) = (runs[j].0 as isize + o, (runs[j].0 + runs[j].1) as isize + o);
        let (lo, hi) = (sa.max(sb), ea.min(eb));
        if hi > lo {
            total += (hi - lo) as usize;
        }
        if ea <= eb {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

/// IoU of a move against its source; closed form where the geometry allows.
fn score(m: &InstanceMask, p: &Profile, mv: Move) -> Result<Option<f64>> {
    match mv {
        Move::Shift(dr, dc) if p.shift_in_bounds(dr, dc) => {
            let inter = self_overlap(m.runs(), dr * m.grid_w() as isize + dc);
            Ok(Some(inter as f64 / (2 * p.n - inter) as f64))
        }
        Move::Trim(side, k) => {
            let removed: usize = match side {
                0 => p.row_counts[p.rmin..p.rmin + k].iter().sum(),
                1 => p.row_counts[p.rmax + 1 - k..=p.rmax].iter().sum(),
                2 => p.col_counts[p.cmin..p.cmin + k].iter().sum(),
                _ => p.col_counts[p.cmax + 1 - k..=p.cmax].iter().sum(),
            };
            Ok((removed < p.n).then(|| (p.n - removed) as f64 / p.n as f64))
        }
        _ => match apply(m, p, mv) {
            Some(c) => Ok(Some(iou(&c, m)?)),
            None => Ok(None),
        },
    }
}

/// Perturbs every truth instance so its IoU with the original lands within
/// [`IOU_TOLERANCE`] of `target_iou`. Returns the predictions and achieved IoUs.
pub fn perturb_masks(truths: &MaskSet, target_iou: f64, seed: u64) -> Result<(MaskSet, Vec<f64>)> {
    perturb_masks_with_targets(truths, &vec![target_iou; truths.len()], seed)
}

/// Per-instance variant of [`perturb_masks`].
///
/// Moves come in tiers: axis translations and one-sided trims, then
/// one-sided sweeps, then diagonal translations. Within the first tier that
/// has any move in tolerance, the move closest to the target wins, ties
/// resolving in a seed-shuffled order. A move may not touch any other truth
/// instance, so each prediction can only ever match its own source.
pub fn perturb_masks_with_targets(
    truths: &MaskSet,
    targets: &[f64],
    seed: u64,
) -> Result<(MaskSet, Vec<f64>)> {
    if targets.len() != truths.len() {
        return Err(Error::InvalidInput(format!(
            "{} targets for {} instances",
            targets.len(),
            truths.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut preds = Vec::with_capacity(truths.len());
    let mut achieved = Vec::with_capacity(truths.len());
    for (i, (truth, &target)) in truths.instances().iter().zip(targets).enumerate() {
        if !(target > 0.0 && target <= 1.0) {
            return Err(Error::InvalidInput(format!("target IoU {target} outside (0, 1]")));
        }
        let profile = Profile::of(truth);
        let mut best: Option<(f64, InstanceMask)> = None;
        for tier in 0..3 {
            let mut cands = moves(&profile, tier);
            cands.shuffle(&mut rng);
            for mv in cands {
                let Some(v) = score(truth, &profile, mv)? else {
                    continue;
                };
                if (v - target).abs() > IOU_TOLERANCE
                    || best.as_ref().is_some_and(|(b, _)| (b - target).abs() <= (v - target).abs())
                {
                    continue;
                }
                let Some(c) = apply(truth, &profile, mv) else {
                    continue;
                };
                let touches_other = truths.instances().iter().enumerate().any(|(j, o)| {
                    j != i && c.intersection_count(o).map(|n| n > 0).unwrap_or(true)
                });
                if !touches_other {
                    best = Some((v, c));
                }
            }
            if best.is_some() {
                break;
            }
        }
        match best {
            Some((v, m)) => {
                achieved.push(v);
                preds.push(m);
            }
            None => {
                return Err(Error::Synth(format!(
                    "instance {i} ({} px): IoU {target} is unattainable within {IOU_TOLERANCE}",
                    truth.pixel_count()
                )))
            }
        }
    }
    let set = MaskSet::new(truths.grid_h(), truths.grid_w(), preds, Provenance::ModelPrediction)?;
    Ok((set, achieved))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthSpec {
    pub years: Vec<i32>,
    pub base_area_m2: f64,
    pub growth_m2_per_year: f64,
    pub jitter_sd_m2: f64,
}

/// Per-year scenes of one site with recorded generator draws.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthSeries {
    pub years: Vec<i32>,
    pub slope_m2_per_year: f64,
    pub jitter_m2: Vec<f64>,
    /// `base + slope * (year - first) + jitter`.
    pub target_areas_m2: Vec<f64>,
    pub scenes: Vec<Scene>,
}

impl GrowthSeries {
    pub fn exact_areas_m2(&self) -> Vec<f64> {
        self.scenes.iter().map(|s| s.exact_area_m2).collect()
    }
}

/// Builds one scene per year whose structures hold the target area.
///
/// The site is a row of vertical strips (strip count from `scene.count.1`)
/// that lengthen or shorten with the area; each strip's share of the total is
/// drawn once per series. With `scene.subpixel` the geometric areas equal the
/// targets; otherwise strip lengths round to whole pixels.
pub fn growth_series(g: &GrowthSpec, scene: &SceneSpec) -> Result<GrowthSeries> {
    scene.validate()?;
    if g.years.is_empty() || g.years.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Synth("growth years must be non-empty and strictly increasing".into()));
    }
    let strips = scene.count.1.max(1);
    let margin = 2usize;
    let gap = scene.min_gap_px.max(2);
    let usable = scene.grid_w.saturating_sub(2 * margin + (strips - 1) * gap);
    let strip_w = usable / strips;
    let max_len = scene.grid_h.saturating_sub(2 * margin) as f64;
    if strip_w == 0 || max_len < 1.0 {
        return Err(Error::Synth(format!(
            "{strips} strips do not fit a {}x{} grid",
            scene.grid_h, scene.grid_w
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let weights: Vec<f64> = (0..strips).map(|_| rng.random_range(0.5..1.5)).collect();
    let total_w: f64 = weights.iter().sum();
    let jitter = if g.jitter_sd_m2 > 0.0 {
        let n = Normal::new(0.0, g.jitter_sd_m2).map_err(|e| Error::Synth(e.to_string()))?;
        g.years.iter().map(|_| n.sample(&mut rng)).collect()
    } else {
        vec![0.0; g.years.len()]
    };
    let px2 = scene.pixel_size_m * scene.pixel_size_m;
    let extent = scene.extent_m2();
    let first = g.years[0];
    let mut targets = Vec::with_capacity(g.years.len());
    let mut scenes = Vec::with_capacity(g.years.len());
    for (k, &year) in g.years.iter().enumerate() {
        let area = g.base_area_m2 + g.growth_m2_per_year * (year - first) as f64 + jitter[k];
        if !(0.0..=extent).contains(&area) {
            return Err(Error::Synth(format!(
                "area {area:.1} m2 in {year} leaves [0, {extent}]"
            )));
        }
        let mut rects = Vec::new();
        if area > 0.0 {
            for (s, wt) in weights.iter().enumerate() {
                let mut len = area * wt / total_w / (strip_w as f64 * px2);
                if !scene.subpixel {
                    len = len.round();
                }
                if !(1.0..=max_len).contains(&len) {
                    return Err(Error::Synth(format!(
                        "area {area:.1} m2 in {year} needs strip length {len:.2} px, outside [1, {max_len}]"
                    )));
                }
                rects.push(Rect {
                    row0: margin as f64,
                    col0: (margin + s * (strip_w + gap)) as f64,
                    rows: len,
                    cols: strip_w as f64,
                });
            }
        }
        let spec = SceneSpec {
            acquired: NaiveDate::from_ymd_opt(year, 7, 1)
                .ok_or_else(|| Error::Synth(format!("year {year} out of range")))?,
            ..scene.clone()
        };
        targets.push(area);
        scenes.push(render_scene(&spec, &rects, &mut rng)?);
    }
    Ok(GrowthSeries {
        years: g.years.clone(),
        slope_m2_per_year: g.growth_m2_per_year,
        jitter_m2: jitter,
        target_areas_m2: targets,
        scenes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetSpec {
    pub sites: usize,
    pub years: Vec<i32>,
    pub base_area_m2: f64,
    pub mean_growth_m2_per_year: f64,
    pub growth_sd_m2_per_year: f64,
    pub jitter_sd_m2: f64,
    pub strips: usize,
    pub grid_px: usize,
    pub pixel_size_m: f64,
    pub noise_sd: f64,
    pub spacing_m: f64,
    pub origin_lon: f64,
    pub origin_lat: f64,
    /// Radiance per square meter of structure.
    pub ntl_per_m2: f64,
    pub ntl_noise_sd: f64,
    pub ntl_cell_m: f64,
    /// Range of per-instance IoUs for the simulated model predictions.
    pub prediction_iou: (f64, f64),
    pub seed: u64,
}

impl Default for FleetSpec {
    fn default() -> Self {
        FleetSpec {
            sites: 50,
            years: (2016..=2021).collect(),
            base_area_m2: 120_000.0,
            mean_growth_m2_per_year: 4_000.0,
            growth_sd_m2_per_year: 1_500.0,
            jitter_sd_m2: 500.0,
            strips: 4,
            grid_px: 80,
            pixel_size_m: 10.0,
            noise_sd: 0.05,
            spacing_m: 2_000.0,
            origin_lon: 110.0,
            origin_lat: 30.0,
            ntl_per_m2: 1e-4,
            ntl_noise_sd: 0.5,
            ntl_cell_m: 500.0,
            prediction_iou: (0.2, 0.9),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteTruth {
    pub id: String,
    pub base_area_m2: f64,
    pub growth_m2_per_year: f64,
    pub jitter_m2: Vec<f64>,
    pub exact_areas_m2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetTruth {
    pub schema_version: u32,
    pub spec: FleetSpec,
    pub sites: Vec<SiteTruth>,
    /// Mean over sites of `growth * (last year - first year)`.
    pub injected_mean_change_m2: f64,
}

pub const TRUTH_FILE: &str = "truth.json";
pub const EVAL_PAIRS_FILE: &str = "eval_pairs.csv";

/// Writes a complete synthetic catalog under `out`: sites, observations,
/// rasters, truth and predicted masks, monthly radiance grids, an evaluation
/// pair list and the generator's ground truth.
pub fn write_fleet(spec: &FleetSpec, out: &Path) -> Result<FleetTruth> {
    if spec.sites == 0 || spec.years.len() < 2 {
        return Err(Error::Synth("fleet needs at least one site and two years".into()));
    }
    let (lo, hi) = spec.prediction_iou;
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(Error::Synth(format!("prediction IoU range {:?} must lie in (0, 1]", spec.prediction_iou)));
    }
    if spec.grid_px as f64 * spec.pixel_size_m > spec.spacing_m {
        return Err(Error::Synth("site scenes overlap; increase spacing_m".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let growth = Normal::new(spec.mean_growth_m2_per_year, spec.growth_sd_m2_per_year)
        .map_err(|e| Error::Synth(e.to_string()))?;
    let lattice_cols = (spec.sites as f64).sqrt().ceil() as usize;
    let lattice_rows = spec.sites.div_ceil(lattice_cols);
    let lattice = GeoTransform::local_meters(
        spec.origin_lon,
        spec.origin_lat,
        spec.spacing_m,
        spec.spacing_m,
        spec.origin_lat,
    )?;
    let classes = [SiteClass::Factory, SiteClass::PowerStation, SiteClass::Port];

    let mut catalog = Catalog::default();
    let mut truths = Vec::with_capacity(spec.sites);
    let mut pairs = csv::Writer::from_writer(Vec::new());
    pairs.write_record(["pred", "truth", "year"])?;
    let mut areas_by_site: Vec<Vec<f64>> = Vec::with_capacity(spec.sites);

    for i in 0..spec.sites {
        let id = format!("s{i:03}");
        let (lon, lat) = lattice.pixel_to_lonlat(
            (i % lattice_cols) as f64 + 0.5,
            (i / lattice_cols) as f64 + 0.5,
        );
        let site_seed: u64 = rng.random();
        let slope = growth.sample(&mut rng);
        let base = spec.base_area_m2 * rng.random_range(0.75..1.25);
        catalog.sites.push(Site {
            id: id.clone(),
            name: format!("Synthetic site {i}"),
            lon,
            lat,
            class: classes[i % classes.len()],
        });
        let scene = SceneSpec {
            grid_h: spec.grid_px,
            grid_w: spec.grid_px,
            pixel_size_m: spec.pixel_size_m,
            count: (spec.strips, spec.strips),
            rect_side_m: (spec.pixel_size_m, spec.grid_px as f64 * spec.pixel_size_m),
            noise_sd: spec.noise_sd,
            min_gap_px: 2,
            subpixel: true,
            center_lon: lon,
            center_lat: lat,
            seed: site_seed,
            ..SceneSpec::default()
        };
        let g = GrowthSpec {
            years: spec.years.clone(),
            base_area_m2: base,
            growth_m2_per_year: slope,
            jitter_sd_m2: spec.jitter_sd_m2,
        };
        let series = growth_series(&g, &scene)?;
        for (k, sc) in series.scenes.iter().enumerate() {
            let year = series.years[k];
            let raster_ref = format!("rasters/{id}/{year}.raster");
            let mask_ref = format!("masks/{id}/{year}.json");
            let pred_ref = format!("predictions/{id}/{year}.json");
            save_raster(&sc.raster, &out.join(&raster_ref))?;
            sc.masks.save(&out.join(&mask_ref))?;
            let mut prng = ChaCha8Rng::seed_from_u64(site_seed ^ year as u64);
            let (lo, hi) = spec.prediction_iou;
            let targets: Vec<f64> = (0..sc.masks.len()).map(|_| prng.random_range(lo..=hi)).collect();
            let (pred, _) = perturb_masks_with_targets(&sc.masks, &targets, prng.random())?;
            pred.save(&out.join(&pred_ref))?;
            pairs.write_record([pred_ref.as_str(), mask_ref.as_str(), &year.to_string()])?;
            let mut o = Observation::new(&id, sc.raster.acquired(), &raster_ref);
            o.masks_ref = Some(mask_ref);
            o.ntl_period = Some(YearMonth::of(sc.raster.acquired()));
            o.resolution_m = spec.pixel_size_m;
            catalog.observations.push(o);
        }
        areas_by_site.push(series.exact_areas_m2());
        truths.push(SiteTruth {
            id,
            base_area_m2: base,
            growth_m2_per_year: slope,
            jitter_m2: series.jitter_m2.clone(),
            exact_areas_m2: series.exact_areas_m2(),
        });
    }

    write_ntl_grids(spec, &catalog.sites, &areas_by_site, lattice_rows, lattice_cols, &mut rng, out)?;
    catalog.save(out)?;
    let pair_bytes = pairs
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("CSV buffer: {e}")))?;
    write_atomic(&out.join(EVAL_PAIRS_FILE), &pair_bytes)?;

    let span = (spec.years[spec.years.len() - 1] - spec.years[0]) as f64;
    let truth = FleetTruth {
        schema_version: SCHEMA_VERSION,
        spec: spec.clone(),
        injected_mean_change_m2: truths.iter().map(|t| t.growth_m2_per_year * span).sum::<f64>()
            / truths.len() as f64,
        sites: truths,
    };
    let mut text = serde_json::to_string_pretty(&truth)?;
    text.push('\n');
    write_atomic(&out.join(TRUTH_FILE), text.as_bytes())?;
    Ok(truth)
}

/// One radiance grid per eligible observation month. Cells touched by a site's
/// crop footprint glow in proportion to that site's structural area.
fn write_ntl_grids(
    spec: &FleetSpec,
    sites: &[Site],
    areas: &[Vec<f64>],
    lattice_rows: usize,
    lattice_cols: usize,
    rng: &mut ChaCha8Rng,
    out: &Path,
) -> Result<()> {
    let cells_per_site = (spec.spacing_m / spec.ntl_cell_m).ceil() as usize;
    let (h, w) = (lattice_rows * cells_per_site + 4, lattice_cols * cells_per_site + 4);
    let lattice = GeoTransform::local_meters(
        spec.origin_lon,
        spec.origin_lat,
        spec.spacing_m,
        spec.spacing_m,
        spec.origin_lat,
    )?;
    let (clon, clat) = lattice.pixel_to_lonlat(lattice_cols as f64 / 2.0, lattice_rows as f64 / 2.0);
    let transform = GeoTransform::centered_on(clon, clat, h, w, spec.ntl_cell_m, spec.ntl_cell_m)?;
    let noise = Normal::new(0.0, spec.ntl_noise_sd.max(0.0))
        .map_err(|e| Error::Synth(e.to_string()))?;
    let mut footprints: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let probe = NtlGrid::new(h, w, vec![0.0; h * w], transform, YearMonth::new(2013, 1)?)?;
    for (i, s) in sites.iter().enumerate() {
        let f = Footprint::new(s.lon, s.lat, DEFAULT_CROP_SIDE_M)?;
        footprints.insert(i, cell_fractions(&probe, &f).into_iter().map(|c| c.index).collect());
    }
    for (k, &year) in spec.years.iter().enumerate() {
        let date = NaiveDate::from_ymd_opt(year, 7, 1)
            .ok_or_else(|| Error::Synth(format!("year {year} out of range")))?;
        if !eligible(date) {
            continue;
        }
        let mut cells: Vec<f64> = (0..h * w).map(|_| noise.sample(rng).abs() * 0.1).collect();
        for (i, idx) in &footprints {
            let level = spec.ntl_per_m2 * areas[*i][k];
            for &c in idx {
                cells[c] = level + noise.sample(rng).abs();
            }
        }
        let period = YearMonth::of(date);
        let grid = NtlGrid::new(h, w, cells, transform, period)?;
        let path = out.join("ntl").join(format!("{period}.raster"));
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        grid.save(&path)?;
    }
    Ok(())
}
