//! Nighttime-light labels from coarse monthly radiance composites.

use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::period::YearMonth;
use crate::raster::{self, BandKind, GeoTransform, RasterGrid};

/// Cells qualify when at least this fraction of their area lies inside the footprint.
pub const MIN_OVERLAP_FRACTION: f64 = 0.5;

// Absorbs degree/meter round-off so a geometric half-overlap still qualifies.
const FRACTION_EPS: f64 = 1e-9;

/// First day radiance composites exist for.
pub fn first_eligible_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2012, 4, 1).expect("valid date")
}

pub fn first_eligible_period() -> YearMonth {
    YearMonth::of(first_eligible_date())
}

/// Whether an image acquired on `acquired` can carry a nighttime-light label.
pub fn eligible(acquired: NaiveDate) -> bool {
    acquired >= first_eligible_date()
}

/// Monthly radiance composite in nW/(cm²·sr).
#[derive(Debug, Clone, PartialEq)]
pub struct NtlGrid {
    height: usize,
    width: usize,
    cells: Vec<f64>,
    transform: GeoTransform,
    period: YearMonth,
}

impl NtlGrid {
    pub fn new(
        height: usize,
        width: usize,
        cells: Vec<f64>,
        transform: GeoTransform,
        period: YearMonth,
    ) -> Result<Self> {
        if height == 0 || width == 0 || cells.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} cells for a {height}x{width} radiance grid",
                cells.len()
            )));
        }
        transform.validate()?;
        if let Some((i, v)) = cells
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::OutOfRange(format!(
                "radiance cell {i} = {v} must be finite and non-negative"
            )));
        }
        if period < first_eligible_period() {
            return Err(Error::OutOfRange(format!(
                "radiance period {period} precedes {}",
                first_eligible_period()
            )));
        }
        Ok(NtlGrid {
            height,
            width,
            cells,
            transform,
            period,
        })
    }

    pub fn from_raster(grid: &RasterGrid) -> Result<Self> {
        if grid.band_kind() != BandKind::Radiance {
            return Err(Error::InvalidInput(format!(
                "expected a radiance grid, got {:?}",
                grid.band_kind()
            )));
        }
        let period = grid
            .period()
            .ok_or_else(|| Error::InvalidInput("radiance grid without a period".into()))?;
        NtlGrid::new(
            grid.height(),
            grid.width(),
            grid.values().to_vec(),
            *grid.transform(),
            period,
        )
    }

    pub fn to_raster(&self) -> RasterGrid {
        RasterGrid::new(
            self.height,
            self.width,
            self.cells.clone(),
            BandKind::Radiance,
            self.period.first_day(),
            self.transform,
        )
        .expect("validated radiance grid")
        .with_period(self.period)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_raster(&raster::load_raster(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        raster::save_raster(&self.to_raster(), path)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn transform(&self) -> &GeoTransform {
        &self.transform
    }

    pub fn period(&self) -> YearMonth {
        self.period
    }

    /// Cell edge lengths in meters (x, y).
    pub fn cell_size_m(&self) -> (f64, f64) {
        (self.transform.pixel_size_x_m, self.transform.pixel_size_y_m)
    }

    pub fn max_radiance(&self) -> f64 {
        self.cells.iter().copied().fold(0.0, f64::max)
    }
}

/// Square ground footprint of a daytime crop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub center_lon: f64,
    pub center_lat: f64,
    pub side_m: f64,
}

impl Footprint {
    pub fn new(center_lon: f64, center_lat: f64, side_m: f64) -> Result<Self> {
        if !(side_m.is_finite() && side_m > 0.0) {
            return Err(Error::InvalidInput(format!("footprint side must be > 0, got {side_m}")));
        }
        if !(center_lon.is_finite() && center_lat.is_finite()) {
            return Err(Error::InvalidInput("footprint center is not finite".into()));
        }
        Ok(Footprint {
            center_lon,
            center_lat,
            side_m,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellOverlap {
    pub row: usize,
    pub col: usize,
    /// Row-major cell index.
    pub index: usize,
    /// Fraction of the cell's area inside the footprint.
    pub fraction: f64,
}

/// Every cell overlapped by the footprint, with its planar area fraction,
/// row-major. Cells outside the footprint are omitted.
pub fn cell_fractions(g: &NtlGrid, f: &Footprint) -> Vec<CellOverlap> {
    let t = &g.transform;
    let (cx, cy) = t.lonlat_to_pixel(f.center_lon, f.center_lat);
    let hx = f.side_m / 2.0 / t.pixel_size_x_m;
    let hy = f.side_m / 2.0 / t.pixel_size_y_m;
    let (x0, x1, y0, y1) = (cx - hx, cx + hx, cy - hy, cy + hy);
    let range = |lo: f64, hi: f64, n: usize| {
        let a = lo.floor().max(0.0).min(n as f64) as usize;
        let b = hi.ceil().max(0.0).min(n as f64) as usize;
        a..b
    };
    let overlap = |lo: f64, hi: f64, k: usize| (hi.min(k as f64 + 1.0) - lo.max(k as f64)).max(0.0);
    let mut out = Vec::new();
    for row in range(y0, y1, g.height) {
        let oy = overlap(y0, y1, row);
        for col in range(x0, x1, g.width) {
            let fraction = oy * overlap(x0, x1, col);
            if fraction > 0.0 {
                out.push(CellOverlap {
                    row,
                    col,
                    index: row * g.width + col,
                    fraction,
                });
            }
        }
    }
    out
}

/// Cells with at least half their area inside the footprint.
pub fn overlapping_cells(g: &NtlGrid, f: &Footprint) -> Vec<CellOverlap> {
    cell_fractions(g, f)
        .into_iter()
        .filter(|c| c.fraction >= MIN_OVERLAP_FRACTION - FRACTION_EPS)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NtlLabel {
    /// Maximum radiance over qualifying cells.
    pub radiance: f64,
    /// Cell holding the maximum; lowest index wins ties.
    pub cell: CellOverlap,
    pub qualifying_cells: usize,
}

pub fn ntl_label(g: &NtlGrid, f: &Footprint) -> Result<NtlLabel> {
    let cells = overlapping_cells(g, f);
    let best = cells
        .iter()
        .copied()
        .reduce(|best, c| {
            if g.cells[c.index] > g.cells[best.index] {
                c
            } else {
                best
            }
        })
        .ok_or_else(|| {
            Error::NoLabel(format!(
                "no radiance cell in period {} has at least half its area inside the {} m footprint at ({}, {})",
                g.period, f.side_m, f.center_lon, f.center_lat
            ))
        })?;
    Ok(NtlLabel {
        radiance: g.cells[best.index],
        cell: best,
        qualifying_cells: cells.len(),
    })
}
