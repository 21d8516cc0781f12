//! Site catalog, observation series, label attachment, site-atomic splits,
//! per-site batching and model-input bundles.
//!
//! On-disk layout of a catalog directory:
//!
//! ```text
//! sites.csv           id,name,lon,lat,class
//! observations.jsonl  one observation per line
//! splits.json         site -> partition assignment
//! ```
//!
//! Writers go through a temporary file in the target directory followed by a
//! rename, so concurrent readers only ever see complete files.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::masks::{structural_area, MaskSet};
use crate::ntl::{eligible, ntl_label, Footprint, NtlGrid};
use crate::period::YearMonth;
use crate::raster::{self, DEFAULT_CROP_SIDE_M};

pub const SCHEMA_VERSION: u32 = 1;
pub const SITES_FILE: &str = "sites.csv";
pub const OBSERVATIONS_FILE: &str = "observations.jsonl";
pub const SPLITS_FILE: &str = "splits.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Train / validation / test fractions.
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.75, 0.125, 0.125];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteClass {
    Factory,
    PowerStation,
    Port,
}

impl SiteClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            SiteClass::Factory => "factory",
            SiteClass::PowerStation => "power_station",
            SiteClass::Port => "port",
        }
    }
}

impl FromStr for SiteClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().replace([' ', '-'], "_").as_str() {
            "factory" => Ok(SiteClass::Factory),
            "power_station" => Ok(SiteClass::PowerStation),
            "port" => Ok(SiteClass::Port),
            other => Err(format!(
                "unknown class {other:?} (expected factory, power_station or port)"
            )),
        }
    }
}

impl fmt::Display for SiteClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub id: String,
    pub name: String,
    pub lon: f64,
    pub lat: f64,
    pub class: SiteClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub site_id: String,
    pub acquired: NaiveDate,
    pub raster_ref: String,
    #[serde(default)]
    pub masks_ref: Option<String>,
    #[serde(default)]
    pub area_label_m2: Option<f64>,
    #[serde(default)]
    pub ntl_label: Option<f64>,
    #[serde(default)]
    pub ntl_period: Option<YearMonth>,
    pub resolution_m: f64,
}

impl Observation {
    pub fn new(site_id: &str, acquired: NaiveDate, raster_ref: &str) -> Self {
        Observation {
            site_id: site_id.to_string(),
            acquired,
            raster_ref: raster_ref.to_string(),
            masks_ref: None,
            area_label_m2: None,
            ntl_label: None,
            ntl_period: None,
            resolution_m: 0.5,
        }
    }

    pub fn year(&self) -> i32 {
        self.acquired.year()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in [("area_label_m2", self.area_label_m2), ("ntl_label", self.ntl_label)] {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(format!("{name} = {v} must be finite and non-negative"));
                }
            }
        }
        if self.ntl_label.is_some() && !eligible(self.acquired) {
            return Err(format!(
                "ntl_label present on an observation acquired {} (before radiance data exists)",
                self.acquired
            ));
        }
        if !(self.resolution_m.is_finite() && self.resolution_m > 0.0) {
            return Err(format!("resolution_m = {} must be > 0", self.resolution_m));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ObservationLine {
    schema_version: u32,
    #[serde(flatten)]
    observation: Observation,
}

/// All observations of one site, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteSeries {
    pub site: Site,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Catalog {
    pub sites: Vec<Site>,
    pub observations: Vec<Observation>,
}

impl Catalog {
    pub fn load(dir: &Path) -> Result<Self> {
        let sites = ingest_catalog(&dir.join(SITES_FILE))?;
        let observations = read_observations(&dir.join(OBSERVATIONS_FILE))?;
        let known: HashSet<&str> = sites.iter().map(|s| s.id.as_str()).collect();
        if let Some((i, o)) = observations
            .iter()
            .enumerate()
            .find(|(_, o)| !known.contains(o.site_id.as_str()))
        {
            return Err(Error::Catalog {
                line: i as u64 + 1,
                field: "site_id".into(),
                message: format!("unknown site {:?}", o.site_id),
            });
        }
        Ok(Catalog {
            sites,
            observations,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join(SITES_FILE), &sites_csv(&self.sites)?)?;
        write_atomic(
            &dir.join(OBSERVATIONS_FILE),
            &observations_jsonl(&self.observations),
        )
    }

    pub fn site(&self, id: &str) -> Option<&Site> {
        self.sites.iter().find(|s| s.id == id)
    }

    /// Observation count per site, including sites without observations.
    pub fn image_counts(&self) -> Vec<(String, usize)> {
        let mut counts: BTreeMap<&str, usize> =
            self.sites.iter().map(|s| (s.id.as_str(), 0)).collect();
        for o in &self.observations {
            *counts.entry(o.site_id.as_str()).or_default() += 1;
        }
        counts.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Per-site series in site-id order, observations date-ascending.
    pub fn series(&self) -> Vec<SiteSeries> {
        let mut by_site: BTreeMap<&str, Vec<Observation>> = BTreeMap::new();
        for o in &self.observations {
            by_site.entry(o.site_id.as_str()).or_default().push(o.clone());
        }
        let mut out = Vec::new();
        for (id, mut obs) in by_site {
            obs.sort_by_key(|o| o.acquired);
            if let Some(site) = self.site(id) {
                out.push(SiteSeries {
                    site: site.clone(),
                    observations: obs,
                });
            }
        }
        out
    }
}

/// Atomically replaces `path` with `bytes`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct SiteRow {
    id: String,
    name: String,
    lon: String,
    lat: String,
    class: String,
}

/// Reads and validates a `id,name,lon,lat,class` site list.
pub fn ingest_catalog(path: &Path) -> Result<Vec<Site>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_sites(file)
}

pub fn ingest_sites(reader: impl std::io::Read) -> Result<Vec<Site>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["id", "name", "lon", "lat", "class"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Catalog {
            line: 1,
            field: "header".into(),
            message: format!("expected header {}, got {}", expected.join(","), headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut sites = Vec::new();
    let mut seen = HashSet::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Catalog {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            field: "row".into(),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let bad = |field: &str, message: String| Error::Catalog {
            line,
            field: field.into(),
            message,
        };
        let row: SiteRow = record
            .deserialize(Some(&headers))
            .map_err(|e| bad("row", e.to_string()))?;
        if row.id.is_empty() {
            return Err(bad("id", "empty site id".into()));
        }
        let coord = |field: &str, text: &str, limit: f64| -> Result<f64> {
            let v: f64 = text
                .parse()
                .map_err(|_| bad(field, format!("{text:?} is not a number")))?;
            if !(v.is_finite() && v.abs() <= limit) {
                return Err(bad(field, format!("{v} outside [-{limit}, {limit}]")));
            }
            Ok(v)
        };
        let lon = coord("lon", &row.lon, 180.0)?;
        let lat = coord("lat", &row.lat, 90.0)?;
        let class = row.class.parse().map_err(|m| bad("class", m))?;
        if !seen.insert(row.id.clone()) {
            return Err(bad("id", format!("duplicate site id {:?}", row.id)));
        }
        sites.push(Site {
            id: row.id,
            name: row.name,
            lon,
            lat,
            class,
        });
    }
    Ok(sites)
}

pub fn sites_csv(sites: &[Site]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "name", "lon", "lat", "class"])?;
    for s in sites {
        w.write_record([
            s.id.as_str(),
            s.name.as_str(),
            &s.lon.to_string(),
            &s.lat.to_string(),
            s.class.as_str(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidInput(format!("CSV buffer: {e}")))
}

/// Counts of sites per class.
pub fn class_counts(sites: &[Site]) -> BTreeMap<SiteClass, usize> {
    let mut out = BTreeMap::new();
    for s in sites {
        *out.entry(s.class).or_default() += 1;
    }
    out
}

pub fn observations_jsonl(obs: &[Observation]) -> Vec<u8> {
    let mut out = Vec::new();
    for o in obs {
        let line = ObservationLine {
            schema_version: SCHEMA_VERSION,
            observation: o.clone(),
        };
        serde_json::to_writer(&mut out, &line).expect("observation serializes");
        out.push(b'\n');
    }
    out
}

pub fn read_observations(path: &Path) -> Result<Vec<Observation>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_observations(&text)
}

pub fn parse_observations(text: &str) -> Result<Vec<Observation>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i as u64 + 1;
        let parsed: ObservationLine = serde_json::from_str(line).map_err(|e| Error::Catalog {
            line: lineno,
            field: "observation".into(),
            message: e.to_string(),
        })?;
        if parsed.schema_version != SCHEMA_VERSION {
            return Err(Error::Catalog {
                line: lineno,
                field: "schema_version".into(),
                message: format!("unsupported schema version {}", parsed.schema_version),
            });
        }
        parsed
            .observation
            .validate()
            .map_err(|message| Error::Catalog {
                line: lineno,
                field: "observation".into(),
                message,
            })?;
        out.push(parsed.observation);
    }
    Ok(out)
}

fn resolve(root: &Path, reference: &str) -> PathBuf {
    let p = Path::new(reference);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelOptions {
    /// Crop side; the structural-area extent is its square.
    pub side_m: f64,
}

impl Default for LabelOptions {
    fn default() -> Self {
        LabelOptions {
            side_m: DEFAULT_CROP_SIDE_M,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelOutcome {
    pub observations: Vec<Observation>,
    pub warnings: Vec<String>,
}

/// Recomputes area labels from mask files and radiance labels from monthly grids.
///
/// Mask references resolve against `mask_root`. Radiance is only attached to
/// observations with an explicit `ntl_period`; observations acquired before
/// radiance data exists never carry one and produce a warning instead.
pub fn attach_labels(
    observations: &[Observation],
    sites: &[Site],
    mask_root: &Path,
    ntl: &BTreeMap<YearMonth, NtlGrid>,
    opts: &LabelOptions,
) -> Result<LabelOutcome> {
    let by_id: HashMap<&str, &Site> = sites.iter().map(|s| (s.id.as_str(), s)).collect();
    let extent_m2 = opts.side_m * opts.side_m;
    let mut warnings = Vec::new();
    let mut out = Vec::with_capacity(observations.len());
    for o in observations {
        let mut o = o.clone();
        let site = by_id
            .get(o.site_id.as_str())
            .ok_or_else(|| Error::Unresolvable(format!("site {:?}", o.site_id)))?;
        if let Some(mref) = &o.masks_ref {
            let masks = MaskSet::load(&resolve(mask_root, mref)).map_err(|e| match e {
                Error::Io { path, .. } => Error::Unresolvable(format!("mask file {}", path.display())),
                other => other,
            })?;
            o.area_label_m2 = Some(structural_area(&masks, extent_m2));
        }
        if !eligible(o.acquired) {
            if o.ntl_period.is_some() || o.ntl_label.is_some() {
                warnings.push(format!(
                    "site {} acquired {}: before radiance data exists, no nighttime-light label",
                    o.site_id, o.acquired
                ));
            }
            o.ntl_label = None;
        } else if let Some(period) = o.ntl_period {
            let grid = ntl.get(&period).ok_or_else(|| {
                Error::Unresolvable(format!("radiance grid for period {period}"))
            })?;
            let footprint = Footprint::new(site.lon, site.lat, opts.side_m)?;
            match ntl_label(grid, &footprint) {
                Ok(l) => o.ntl_label = Some(l.radiance),
                Err(Error::NoLabel(msg)) => {
                    warnings.push(format!("site {} acquired {}: {msg}", o.site_id, o.acquired));
                    o.ntl_label = None;
                }
                Err(e) => return Err(e),
            }
        }
        out.push(o);
    }
    Ok(LabelOutcome {
        observations: out,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Validation, Partition::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        }
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "validation" | "val" => Ok(Partition::Validation),
            "test" => Ok(Partition::Test),
            other => Err(Error::InvalidInput(format!("unknown partition {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub schema_version: u32,
    pub seed: u64,
    pub fractions: [f64; 3],
    pub assignments: BTreeMap<String, Partition>,
}

impl SplitAssignment {
    pub fn partition_of(&self, site_id: &str) -> Option<Partition> {
        self.assignments.get(site_id).copied()
    }

    /// Image counts per partition (train, validation, test).
    pub fn image_counts(&self, counts: &[(String, usize)]) -> [usize; 3] {
        let mut out = [0; 3];
        for (id, n) in counts {
            if let Some(p) = self.partition_of(id) {
                out[p as usize] += n;
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

/// Site-atomic split. Sites (with their image counts) are shuffled by a seeded
/// generator, then each goes to the partition furthest below its image-count
/// target, ties going to the earlier partition. Every partition ends within one
/// site's image count of its target.
pub fn split_by_site(
    site_counts: &[(String, usize)],
    fractions: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment> {
    if site_counts.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "need at least 3 sites to split, got {}",
            site_counts.len()
        )));
    }
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidInput(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let mut order: Vec<(&str, usize)> = site_counts.iter().map(|(s, n)| (s.as_str(), *n)).collect();
    order.sort_unstable();
    if order.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::InvalidInput("duplicate site id in split input".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let total: usize = order.iter().map(|(_, n)| n).sum();
    let targets = fractions.map(|f| f * total as f64);
    let mut filled = [0usize; 3];
    let mut assignments = BTreeMap::new();
    for (id, n) in order {
        let mut best = 0;
        for k in 1..3 {
            if targets[k] - filled[k] as f64 > targets[best] - filled[best] as f64 {
                best = k;
            }
        }
        filled[best] += n;
        assignments.insert(id.to_string(), Partition::ALL[best]);
    }
    Ok(SplitAssignment {
        schema_version: SCHEMA_VERSION,
        seed,
        fractions,
        assignments,
    })
}

/// Observations of a single site, date-ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub site_id: String,
    pub observations: Vec<Observation>,
}

/// One batch per site (site-id order); each batch sorted by acquisition date.
pub fn batch_by_site(partition: &[Observation]) -> Vec<Batch> {
    let mut by_site: BTreeMap<&str, Vec<Observation>> = BTreeMap::new();
    for o in partition {
        by_site.entry(o.site_id.as_str()).or_default().push(o.clone());
    }
    by_site
        .into_iter()
        .map(|(id, mut obs)| {
            obs.sort_by_key(|o| o.acquired);
            Batch {
                site_id: id.to_string(),
                observations: obs,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleFile {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleBatch {
    pub site_id: String,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub schema_version: u32,
    pub target_h: usize,
    pub target_w: usize,
    pub observations: usize,
    pub batches: Vec<BundleBatch>,
    pub files: Vec<BundleFile>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn safe_component(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes resampled rasters, a label table and a checksummed manifest for an
/// external learner. Batches follow [`batch_by_site`].
pub fn export_training_bundle(
    partition: &[Observation],
    raster_root: &Path,
    target_h: usize,
    target_w: usize,
    out_dir: &Path,
) -> Result<BundleManifest> {
    let batches = batch_by_site(partition);
    let mut files = Vec::new();
    let mut manifest_batches = Vec::new();
    let mut labels = csv::Writer::from_writer(Vec::new());
    labels.write_record(["file", "site_id", "acquired", "area_label_m2", "ntl_label"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();

    let mut record = |rel: String, bytes: &[u8]| -> Result<()> {
        let path = out_dir.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        files.push(BundleFile {
            path: rel,
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    };

    for batch in &batches {
        let mut names = Vec::new();
        for (k, o) in batch.observations.iter().enumerate() {
            let src = resolve(raster_root, &o.raster_ref);
            let grid = raster::load_raster(&src).map_err(|e| match e {
                Error::Io { path, .. } => Error::Unresolvable(format!("raster {}", path.display())),
                other => other,
            })?;
            let resampled = raster::resample_bilinear(&grid, target_h, target_w)?;
            let rel = format!("rasters/{}/{:04}.raster", safe_component(&batch.site_id), k);
            record(rel.clone(), &raster::write_raster(&resampled))?;
            labels.write_record([
                rel.as_str(),
                o.site_id.as_str(),
                &o.acquired.to_string(),
                &opt(o.area_label_m2),
                &opt(o.ntl_label),
            ])?;
            names.push(rel);
        }
        manifest_batches.push(BundleBatch {
            site_id: batch.site_id.clone(),
            files: names,
        });
    }
    let label_bytes = labels
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("CSV buffer: {e}")))?;
    record("labels.csv".to_string(), &label_bytes)?;

    let manifest = BundleManifest {
        schema_version: SCHEMA_VERSION,
        target_h,
        target_w,
        observations: partition.len(),
        batches: manifest_batches,
        files,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_atomic(&out_dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(manifest)
}

/// Re-hashes every file listed in a bundle manifest.
pub fn verify_bundle(dir: &Path) -> Result<BundleManifest> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: BundleManifest = serde_json::from_str(&text)?;
    for f in &manifest.files {
        let path = dir.join(&f.path);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let found = sha256_hex(&bytes);
        if found != f.sha256 {
            return Err(Error::Checksum {
                path: f.path.clone(),
                expected: f.sha256.clone(),
                found,
            });
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::{InstanceMask, Provenance};
    use crate::raster::{BandKind, GeoTransform, RasterGrid};

    fn d(y: i32, m: u32, dd: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, dd).unwrap()
    }

    #[test]
    fn ingest_valid_catalog() {
        let text = "id,name,lon,lat,class\n\
                    a,Plant A,116.4,39.9,factory\n\
                    b,Dam B,101.2,26.1,power station\n\
                    c,Port C,121.5,31.2,port\n";
        let sites = ingest_sites(text.as_bytes()).unwrap();
        assert_eq!(sites.len(), 3);
        assert_eq!(sites[1].class, SiteClass::PowerStation);
        let counts = class_counts(&sites);
        assert_eq!(counts[&SiteClass::Port], 1);
    }

    #[test]
    fn ingest_reports_line_and_field() {
        let text = "id,name,lon,lat,class\na,A,116.4,39.9,factory\nb,B,100.0,95,port\n";
        match ingest_sites(text.as_bytes()) {
            Err(Error::Catalog { line, field, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(field, "lat");
            }
            other => panic!("expected catalog error, got {other:?}"),
        }
        let dup = "id,name,lon,lat,class\na,A,1,1,port\na,B,2,2,port\n";
        assert!(matches!(
            ingest_sites(dup.as_bytes()),
            Err(Error::Catalog { field, .. }) if field == "id"
        ));
        let class = "id,name,lon,lat,class\na,A,1,1,mine\n";
        assert!(matches!(
            ingest_sites(class.as_bytes()),
            Err(Error::Catalog { field, .. }) if field == "class"
        ));
        let short = "id,name,lon,lat,class\na,A,1,1\n";
        assert!(ingest_sites(short.as_bytes()).is_err());
        let header = "id,name,lat,lon,class\n";
        assert!(ingest_sites(header.as_bytes()).is_err());
    }

    #[test]
    fn full_corpus_class_breakdown() {
        let mut text = String::from("id,name,lon,lat,class\n");
        for i in 0..419 {
            let class = match i {
                0..=214 => "factory",
                215..=362 => "power_station",
                _ => "port",
            };
            text.push_str(&format!("s{i},Site {i},{},{},{class}\n", 100.0 + i as f64 * 0.01, 30.0));
        }
        let counts = class_counts(&ingest_sites(text.as_bytes()).unwrap());
        assert_eq!(counts[&SiteClass::Factory], 215);
        assert_eq!(counts[&SiteClass::PowerStation], 148);
        assert_eq!(counts[&SiteClass::Port], 56);
    }

    #[test]
    fn catalog_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut o = Observation::new("a", d(2015, 3, 2), "rasters/a.raster");
        o.area_label_m2 = Some(1234.5);
        o.ntl_period = Some(YearMonth::new(2015, 3).unwrap());
        o.ntl_label = Some(3.25);
        let cat = Catalog {
            sites: vec![Site {
                id: "a".into(),
                name: "Name, with comma".into(),
                lon: 116.123456789,
                lat: -3.5,
                class: SiteClass::Port,
            }],
            observations: vec![o, Observation::new("a", d(2009, 1, 1), "x")],
        };
        cat.save(dir.path()).unwrap();
        assert_eq!(Catalog::load(dir.path()).unwrap(), cat);
        let text = fs::read_to_string(dir.path().join(OBSERVATIONS_FILE)).unwrap();
        assert!(text.lines().all(|l| l.starts_with("{\"schema_version\":1,")));
    }

    #[test]
    fn pre_launch_ntl_label_rejected_on_load() {
        let line = r#"{"schema_version":1,"site_id":"a","acquired":"2011-06-15","raster_ref":"r","ntl_label":3.0,"resolution_m":0.5}"#;
        assert!(parse_observations(line).is_err());
    }

    #[test]
    fn split_eight_single_image_sites() {
        let counts: Vec<(String, usize)> = (0..8).map(|i| (format!("s{i}"), 1)).collect();
        let s = split_by_site(&counts, DEFAULT_FRACTIONS, 42).unwrap();
        assert_eq!(s.image_counts(&counts), [6, 1, 1]);
        assert_eq!(s, split_by_site(&counts, DEFAULT_FRACTIONS, 42).unwrap());
        let mut reversed = counts.clone();
        reversed.reverse();
        assert_eq!(s, split_by_site(&reversed, DEFAULT_FRACTIONS, 42).unwrap());
    }

    #[test]
    fn split_rejects_bad_input() {
        let two: Vec<(String, usize)> = (0..2).map(|i| (format!("s{i}"), 1)).collect();
        assert!(split_by_site(&two, DEFAULT_FRACTIONS, 0).is_err());
        let four: Vec<(String, usize)> = (0..4).map(|i| (format!("s{i}"), 1)).collect();
        assert!(split_by_site(&four, [0.5, 0.5, 0.0], 0).is_err());
        assert!(split_by_site(&four, [0.5, 0.3, 0.3], 0).is_err());
    }

    #[test]
    fn split_at_full_corpus_scale() {
        // 419 sites, 2,078 images: 402 sites with 5 images, 17 with 4.
        let counts: Vec<(String, usize)> = (0..419)
            .map(|i| (format!("site{i:03}"), if i < 402 { 5 } else { 4 }))
            .collect();
        let total: usize = counts.iter().map(|c| c.1).sum();
        assert_eq!(total, 2078);
        let s = split_by_site(&counts, DEFAULT_FRACTIONS, 2021).unwrap();
        let got = s.image_counts(&counts);
        let targets = DEFAULT_FRACTIONS.map(|f| f * total as f64);
        for k in 0..3 {
            assert!((got[k] as f64 - targets[k]).abs() <= 5.0, "{got:?}");
        }
        // The reported 1556/256/256 split sums to 2068, ten short of 2078.
        for (k, published) in [1556.0, 256.0, 256.0].into_iter().enumerate() {
            assert!((got[k] as f64 - published).abs() <= 5.0 + 10.0, "{got:?}");
        }
    }

    #[test]
    fn batches_group_and_sort() {
        let mut obs = Vec::new();
        for (k, y) in [2014, 2010, 2012].into_iter().enumerate() {
            obs.push(Observation::new("A", d(y, 1, 1), &format!("a{k}")));
        }
        for y in [2019, 2011, 2015, 2013, 2017] {
            obs.push(Observation::new("B", d(y, 1, 1), "b"));
        }
        let batches = batch_by_site(&obs);
        assert_eq!(
            batches.iter().map(|b| b.observations.len()).collect::<Vec<_>>(),
            vec![3, 5]
        );
        for b in &batches {
            assert!(b.observations.windows(2).all(|w| w[0].acquired <= w[1].acquired));
            assert!(b.observations.iter().all(|o| o.site_id == b.site_id));
        }
        let mut flat: Vec<_> = batches.into_iter().flat_map(|b| b.observations).collect();
        let key = |o: &Observation| (o.site_id.clone(), o.acquired, o.raster_ref.clone());
        flat.sort_by_key(key);
        obs.sort_by_key(key);
        assert_eq!(flat, obs);
    }

    fn fixture(dir: &Path) -> (Vec<Site>, Vec<Observation>) {
        let site = Site {
            id: "s1".into(),
            name: "S1".into(),
            lon: 110.0,
            lat: 30.0,
            class: SiteClass::Factory,
        };
        let full = MaskSet::new(
            8,
            8,
            vec![InstanceMask::from_runs(8, 8, [(0, 64)]).unwrap()],
            Provenance::ModelPrediction,
        )
        .unwrap();
        full.save(&dir.join("masks/full.json")).unwrap();
        let t = GeoTransform::centered_on(110.0, 30.0, 8, 8, 100.0, 100.0).unwrap();
        let g = RasterGrid::new(8, 8, vec![0.5; 64], BandKind::Panchromatic, d(2011, 6, 15), t)
            .unwrap();
        raster::save_raster(&g, &dir.join("rasters/s1_2011.raster")).unwrap();
        raster::save_raster(&g, &dir.join("rasters/s1_2016.raster")).unwrap();
        let mut a = Observation::new("s1", d(2011, 6, 15), "rasters/s1_2011.raster");
        a.masks_ref = Some("masks/full.json".into());
        a.ntl_period = Some(YearMonth::new(2012, 4).unwrap());
        let mut b = Observation::new("s1", d(2016, 8, 1), "rasters/s1_2016.raster");
        b.masks_ref = Some("masks/full.json".into());
        b.ntl_period = Some(YearMonth::new(2016, 8).unwrap());
        (vec![site], vec![a, b])
    }

    fn ntl_library() -> BTreeMap<YearMonth, NtlGrid> {
        let mut lib = BTreeMap::new();
        for p in [YearMonth::new(2012, 4).unwrap(), YearMonth::new(2016, 8).unwrap()] {
            let t = GeoTransform::centered_on(110.0, 30.0, 6, 6, 500.0, 500.0).unwrap();
            let cells = (0..36).map(|i| i as f64 * 0.5).collect();
            lib.insert(p, NtlGrid::new(6, 6, cells, t, p).unwrap());
        }
        lib
    }

    #[test]
    fn labels_attached_with_launch_rule() {
        let dir = tempfile::tempdir().unwrap();
        let (sites, obs) = fixture(dir.path());
        let lib = ntl_library();
        let out = attach_labels(&obs, &sites, dir.path(), &lib, &LabelOptions::default()).unwrap();
        assert_eq!(out.observations[0].area_label_m2, Some(640_000.0));
        assert_eq!(out.observations[0].ntl_label, None);
        assert_eq!(out.warnings.len(), 1);
        assert!(out.warnings[0].contains("2011-06-15"));
        // 800 m footprint at grid center covers the 4 central 500 m cells at >= 0.5? Each
        // central cell overlaps 400x400 m = 0.64 of its area.
        let expected = [14usize, 15, 20, 21].iter().map(|&i| i as f64 * 0.5).fold(0.0, f64::max);
        assert_eq!(out.observations[1].ntl_label, Some(expected));

        let again = attach_labels(&out.observations, &sites, dir.path(), &lib, &LabelOptions::default())
            .unwrap();
        assert_eq!(observations_jsonl(&again.observations), observations_jsonl(&out.observations));
    }

    #[test]
    fn labels_fail_on_missing_references() {
        let dir = tempfile::tempdir().unwrap();
        let (sites, mut obs) = fixture(dir.path());
        let empty = BTreeMap::new();
        assert!(matches!(
            attach_labels(&obs[1..], &sites, dir.path(), &empty, &LabelOptions::default()),
            Err(Error::Unresolvable(_))
        ));
        obs[1].masks_ref = Some("masks/missing.json".into());
        assert!(matches!(
            attach_labels(&obs[1..], &sites, dir.path(), &ntl_library(), &LabelOptions::default()),
            Err(Error::Unresolvable(_))
        ));
    }

    #[test]
    fn bundle_export_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        let (_, mut obs) = fixture(dir.path());
        let mut other = obs[0].clone();
        other.site_id = "s2".into();
        obs.push(other);
        let out = dir.path().join("bundle");
        let m = export_training_bundle(&obs, dir.path(), 516, 426, &out).unwrap();
        assert_eq!(m.batches.len(), 2);
        assert_eq!((m.target_h, m.target_w), (516, 426));
        assert_eq!(m.observations, 3);
        verify_bundle(&out).unwrap();
        let g = raster::load_raster(&out.join(&m.batches[0].files[0])).unwrap();
        assert_eq!((g.height(), g.width()), (516, 426));

        let victim = out.join(&m.batches[1].files[0]);
        let mut bytes = fs::read(&victim).unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 0x01;
        fs::write(&victim, bytes).unwrap();
        match verify_bundle(&out) {
            Err(Error::Checksum { path, .. }) => assert_eq!(path, m.batches[1].files[0]),
            other => panic!("expected checksum error, got {other:?}"),
        }
    }
}
