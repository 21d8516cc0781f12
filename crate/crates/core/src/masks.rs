//! Run-length instance masks, overlap-free structure counts and detection metrics.
//!
//! Masks are stored as maximal runs over row-major pixel indices. Unions and
//! intersections are merges over sorted runs, so no pixel grid is ever
//! materialized.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Footprint of the square crop around each site, in square meters (800 m x 800 m).
pub const DEFAULT_EXTENT_M2: f64 = 800.0 * 800.0;

/// Year groups with fewer images than this are flagged in grouped AP tables.
pub const DEFAULT_MIN_GROUP_IMAGES: usize = 9;

pub const MASK_SCHEMA_VERSION: u32 = 1;

/// One instance as maximal `(start, len)` runs, sorted, non-overlapping and non-adjacent.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InstanceMask {
    grid_h: usize,
    grid_w: usize,
    runs: Vec<(usize, usize)>,
}

impl InstanceMask {
    /// Builds a mask from arbitrary runs; overlapping or touching runs are merged.
    pub fn from_runs(
        grid_h: usize,
        grid_w: usize,
        runs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 {
            return Err(Error::InvalidMask(format!(
                "grid must be at least 1x1, got {grid_h}x{grid_w}"
            )));
        }
        let n = grid_h * grid_w;
        let mut raw: Vec<(usize, usize)> = runs.into_iter().collect();
        for &(start, len) in &raw {
            if len == 0 {
                return Err(Error::InvalidMask(format!("zero-length run at {start}")));
            }
            if start.checked_add(len).is_none_or(|end| end > n) {
                return Err(Error::InvalidMask(format!(
                    "run ({start}, {len}) exceeds grid of {n} pixels"
                )));
            }
        }
        raw.sort_unstable();
        let runs = merge_sorted(raw);
        if runs.is_empty() {
            return Err(Error::InvalidMask("mask covers no pixels".into()));
        }
        Ok(InstanceMask {
            grid_h,
            grid_w,
            runs,
        })
    }

    pub fn from_indices(
        grid_h: usize,
        grid_w: usize,
        indices: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        Self::from_runs(grid_h, grid_w, indices.into_iter().map(|i| (i, 1)))
    }

    pub fn from_bitmap(grid_h: usize, grid_w: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != grid_h * grid_w {
            return Err(Error::DimensionMismatch(format!(
                "bitmap has {} entries for a {grid_h}x{grid_w} grid",
                bits.len()
            )));
        }
        Self::from_indices(
            grid_h,
            grid_w,
            bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i),
        )
    }

    /// Axis-aligned block of `rows` x `cols` pixels with upper-left corner at (`row0`, `col0`).
    pub fn rect(
        grid_h: usize,
        grid_w: usize,
        row0: usize,
        col0: usize,
        rows: usize,
        cols: usize,
    ) -> Result<Self> {
        if row0 + rows > grid_h || col0 + cols > grid_w {
            return Err(Error::InvalidMask(format!(
                "rectangle at ({row0}, {col0}) of {rows}x{cols} exceeds {grid_h}x{grid_w} grid"
            )));
        }
        Self::from_runs(
            grid_h,
            grid_w,
            (row0..row0 + rows).map(|r| (r * grid_w + col0, cols)),
        )
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn runs(&self) -> &[(usize, usize)] {
        &self.runs
    }

    pub fn pixel_count(&self) -> usize {
        self.runs.iter().map(|&(_, len)| len).sum()
    }

    pub fn contains(&self, index: usize) -> bool {
        let k = self.runs.partition_point(|&(s, _)| s <= index);
        k > 0 && {
            let (s, len) = self.runs[k - 1];
            index < s + len
        }
    }

    /// Row-major pixel indices covered by the mask, ascending.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.runs.iter().flat_map(|&(s, len)| s..s + len)
    }

    pub fn to_bitmap(&self) -> Vec<bool> {
        let mut bits = vec![false; self.grid_h * self.grid_w];
        for i in self.indices() {
            bits[i] = true;
        }
        bits
    }

    fn same_grid(&self, other: &InstanceMask) -> Result<()> {
        if self.grid_h != other.grid_h || self.grid_w != other.grid_w {
            return Err(Error::DimensionMismatch(format!(
                "masks on {}x{} and {}x{} grids",
                self.grid_h, self.grid_w, other.grid_h, other.grid_w
            )));
        }
        Ok(())
    }

    fn span(&self) -> (usize, usize) {
        let (first, _) = self.runs[0];
        let &(last, len) = self.runs.last().expect("masks are non-empty");
        (first, last + len)
    }

    pub fn intersection_count(&self, other: &InstanceMask) -> Result<usize> {
        self.same_grid(other)?;
        Ok(intersect_runs(&self.runs, &other.runs))
    }

    /// Nearest-neighbour upscaling by an integer factor: every pixel becomes a k x k block.
    pub fn upscale(&self, k: usize) -> Result<InstanceMask> {
        if k == 0 {
            return Err(Error::InvalidInput("upscale factor must be >= 1".into()));
        }
        let w = self.grid_w;
        let mut runs = Vec::new();
        for &(s, len) in &self.runs {
            let mut idx = s;
            let end = s + len;
            while idx < end {
                let row = idx / w;
                let col = idx % w;
                let seg = (end - idx).min(w - col);
                for dr in 0..k {
                    runs.push(((row * k + dr) * w * k + col * k, seg * k));
                }
                idx += seg;
            }
        }
        Self::from_runs(self.grid_h * k, self.grid_w * k, runs)
    }
}

fn merge_sorted(sorted: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(sorted.len());
    for (s, len) in sorted {
        match out.last_mut() {
            Some((ls, llen)) if s <= *ls + *llen => {
                let end = (*ls + *llen).max(s + len);
                *llen = end - *ls;
            }
            _ => out.push((s, len)),
        }
    }
    out
}

fn intersect_runs(a: &[(usize, usize)], b: &[(usize, usize)]) -> usize {
    let (mut i, mut j, mut total) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        let (sa, ea) = (a[i].0, a[i].0 + a[i].1);
        let (sb, eb) = (b[j].0, b[j].0 + b[j].1);
        let lo = sa.max(sb);
        let hi = ea.min(eb);
        if hi > lo {
            total += hi - lo;
        }
        if ea <= eb {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GroundTruthGeocoded,
    ModelPrediction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    grid_h: usize,
    grid_w: usize,
    instances: Vec<InstanceMask>,
    provenance: Provenance,
}

impl MaskSet {
    pub fn new(
        grid_h: usize,
        grid_w: usize,
        instances: Vec<InstanceMask>,
        provenance: Provenance,
    ) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 {
            return Err(Error::InvalidMask(format!(
                "grid must be at least 1x1, got {grid_h}x{grid_w}"
            )));
        }
        if let Some((k, m)) = instances
            .iter()
            .enumerate()
            .find(|(_, m)| m.grid_h != grid_h || m.grid_w != grid_w)
        {
            return Err(Error::DimensionMismatch(format!(
                "instance {k} is on a {}x{} grid, set is {grid_h}x{grid_w}",
                m.grid_h, m.grid_w
            )));
        }
        Ok(MaskSet {
            grid_h,
            grid_w,
            instances,
            provenance,
        })
    }

    pub fn empty(grid_h: usize, grid_w: usize, provenance: Provenance) -> Result<Self> {
        Self::new(grid_h, grid_w, Vec::new(), provenance)
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn instances(&self) -> &[InstanceMask] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    fn same_grid(&self, other: &MaskSet) -> Result<()> {
        if self.grid_h != other.grid_h || self.grid_w != other.grid_w {
            return Err(Error::DimensionMismatch(format!(
                "mask sets on {}x{} and {}x{} grids",
                self.grid_h, self.grid_w, other.grid_h, other.grid_w
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MaskFile = serde_json::from_str(text)?;
        let instances = file
            .instances
            .into_iter()
            .enumerate()
            .map(|(k, runs)| {
                InstanceMask::from_runs(file.grid_h, file.grid_w, runs).map_err(|e| {
                    Error::InvalidMask(format!("instance {k}: {e}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MaskSet::new(file.grid_h, file.grid_w, instances, file.provenance)
    }

    pub fn to_json(&self) -> String {
        let file = MaskFile {
            schema_version: MASK_SCHEMA_VERSION,
            grid_h: self.grid_h,
            grid_w: self.grid_w,
            provenance: self.provenance,
            instances: self.instances.iter().map(|m| m.runs.clone()).collect(),
        };
        serde_json::to_string(&file).expect("mask file serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::InvalidMask(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// On-disk mask document emitted by segmentation models for scoring.
#[derive(Debug, Serialize, Deserialize)]
struct MaskFile {
    #[serde(default = "default_schema")]
    schema_version: u32,
    grid_h: usize,
    grid_w: usize,
    provenance: Provenance,
    instances: Vec<Vec<(usize, usize)>>,
}

fn default_schema() -> u32 {
    MASK_SCHEMA_VERSION
}

/// Pixels covered by at least one instance; overlaps count once.
pub fn union_pixel_count(s: &MaskSet) -> usize {
    let mut all: Vec<(usize, usize)> = s
        .instances
        .iter()
        .flat_map(|m| m.runs.iter().copied())
        .collect();
    all.sort_unstable();
    merge_sorted(all).iter().map(|&(_, len)| len).sum()
}

/// Structural area `extent_m2 * P_S / (H * W)`.
pub fn structural_area(s: &MaskSet, extent_m2: f64) -> f64 {
    extent_m2 * union_pixel_count(s) as f64 / (s.grid_h * s.grid_w) as f64
}

/// `|a ∩ b| / |a ∪ b|`.
pub fn iou(a: &InstanceMask, b: &InstanceMask) -> Result<f64> {
    a.same_grid(b)?;
    Ok(iou_unchecked(a, b))
}

fn iou_unchecked(a: &InstanceMask, b: &InstanceMask) -> f64 {
    let (a0, a1) = a.span();
    let (b0, b1) = b.span();
    if a1 <= b0 || b1 <= a0 {
        return 0.0;
    }
    let inter = intersect_runs(&a.runs, &b.runs);
    let union = a.pixel_count() + b.pixel_count() - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// (prediction index, truth index, IoU), in the order pairs were accepted.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_truths: Vec<usize>,
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "IoU threshold must lie in (0, 1], got {threshold}"
        )));
    }
    Ok(())
}

/// Greedy one-to-one matching: candidate pairs with IoU >= `threshold` are
/// accepted in descending IoU order, ties going to the lower prediction index
/// and then the lower truth index.
pub fn match_instances(preds: &MaskSet, truths: &MaskSet, threshold: f64) -> Result<MatchResult> {
    preds.same_grid(truths)?;
    check_threshold(threshold)?;
    let mut candidates = Vec::new();
    for (p, pm) in preds.instances.iter().enumerate() {
        for (t, tm) in truths.instances.iter().enumerate() {
            let v = iou_unchecked(pm, tm);
            if v >= threshold {
                candidates.push((v, p, t));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut pred_used = vec![false; preds.len()];
    let mut truth_used = vec![false; truths.len()];
    let mut pairs = Vec::new();
    for (v, p, t) in candidates {
        if !pred_used[p] && !truth_used[t] {
            pred_used[p] = true;
            truth_used[t] = true;
            pairs.push((p, t, v));
        }
    }
    let unused = |used: &[bool]| {
        used.iter()
            .enumerate()
            .filter(|(_, &u)| !u)
            .map(|(i, _)| i)
            .collect()
    };
    Ok(MatchResult {
        pairs,
        unmatched_predictions: unused(&pred_used),
        unmatched_truths: unused(&truth_used),
    })
}

/// True/false positive counts at one IoU threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PrecisionCounts {
    pub tp: usize,
    pub fp: usize,
}

impl PrecisionCounts {
    pub fn predictions(&self) -> usize {
        self.tp + self.fp
    }

    /// `TP / (TP + FP)`; undefined when there are no predictions.
    pub fn ap(&self) -> Result<f64> {
        if self.predictions() == 0 {
            return Err(Error::UndefinedMetric(
                "average precision with zero predictions".into(),
            ));
        }
        Ok(self.tp as f64 / self.predictions() as f64)
    }
}

impl std::ops::AddAssign for PrecisionCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
    }
}

pub fn precision_counts(
    preds: &MaskSet,
    truths: &MaskSet,
    threshold: f64,
) -> Result<PrecisionCounts> {
    let m = match_instances(preds, truths, threshold)?;
    Ok(PrecisionCounts {
        tp: m.pairs.len(),
        fp: m.unmatched_predictions.len(),
    })
}

/// Precision-style AP at IoU threshold `T`: matched predictions over all predictions.
pub fn average_precision(preds: &MaskSet, truths: &MaskSet, threshold: f64) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::UndefinedMetric(
            "average precision with zero predictions".into(),
        ));
    }
    precision_counts(preds, truths, threshold)?.ap()
}

/// One image's prediction/truth pair tagged with its acquisition year.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub preds: MaskSet,
    pub truths: MaskSet,
    pub year: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct YearAp {
    pub year: i32,
    pub images: usize,
    pub zero_prediction_images: usize,
    pub counts: PrecisionCounts,
    /// `None` when the year pooled zero predictions.
    pub ap: Option<f64>,
    pub below_minimum: bool,
}

/// Pools TP/FP per year and reports AP per year, ascending by year.
pub fn ap_grouped(dataset: &[EvalItem], threshold: f64, min_images: usize) -> Result<Vec<YearAp>> {
    check_threshold(threshold)?;
    let mut groups: BTreeMap<i32, (usize, usize, PrecisionCounts)> = BTreeMap::new();
    for item in dataset {
        let c = precision_counts(&item.preds, &item.truths, threshold)?;
        let g = groups.entry(item.year).or_default();
        g.0 += 1;
        if item.preds.is_empty() {
            g.1 += 1;
        }
        g.2 += c;
    }
    Ok(groups
        .into_iter()
        .map(|(year, (images, zero, counts))| YearAp {
            year,
            images,
            zero_prediction_images: zero,
            counts,
            ap: counts.ap().ok(),
            below_minimum: images < min_images,
        })
        .collect())
}

/// Pooled counts over a whole dataset at one threshold.
pub fn pooled_counts(dataset: &[EvalItem], threshold: f64) -> Result<PrecisionCounts> {
    let mut total = PrecisionCounts::default();
    for item in dataset {
        total += precision_counts(&item.preds, &item.truths, threshold)?;
    }
    Ok(total)
}
