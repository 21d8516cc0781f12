//! Single-band raster grids with a local geotransform.
//!
//! Every consumer downstream sees the same thing: a row-major `f64` grid,
//! imagery normalized to `[0, 1]`, and a transform mapping pixel edges to
//! longitude/latitude through a local equirectangular approximation.

mod io;

pub use io::{import_image, load_raster, save_raster, write_raster, ImportedImage, RasterHeader};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::period::YearMonth;

/// Meters per degree of latitude (WGS84 equatorial radius, spherical approximation).
pub const METERS_PER_DEGREE: f64 = 6_378_137.0 * std::f64::consts::PI / 180.0;

/// NTSC luminance weights for red, green and blue.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Side of the square footprint cropped around each site, in meters.
pub const DEFAULT_CROP_SIDE_M: f64 = 800.0;

/// Default model-input size (height, width) for bilinear downscaling.
pub const DEFAULT_RESAMPLE_DIMS: (usize, usize) = (516, 426);

// Pixel-coordinate slack when testing window edges against the raster extent.
const EDGE_EPS_PX: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrsTag {
    LocalMeters,
    #[serde(rename = "wgs84_approx")]
    Wgs84Approx,
}

/// North-up transform. The origin is the upper-left corner of pixel (0, 0);
/// rows grow southward and columns eastward.
///
/// Degree/meter conversion scales longitude by `cos(anchor_lat)`. For
/// `Wgs84Approx` grids the anchor is the origin latitude at construction and is
/// carried unchanged through crops, so derived grids share one planar frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub pixel_size_x_m: f64,
    pub pixel_size_y_m: f64,
    pub crs: CrsTag,
    pub anchor_lat: f64,
}

impl GeoTransform {
    pub fn local_meters(
        origin_lon: f64,
        origin_lat: f64,
        pixel_size_x_m: f64,
        pixel_size_y_m: f64,
        anchor_lat: f64,
    ) -> Result<Self> {
        let t = GeoTransform {
            origin_lon,
            origin_lat,
            pixel_size_x_m,
            pixel_size_y_m,
            crs: CrsTag::LocalMeters,
            anchor_lat,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn wgs84(
        origin_lon: f64,
        origin_lat: f64,
        pixel_size_x_m: f64,
        pixel_size_y_m: f64,
    ) -> Result<Self> {
        let t = GeoTransform {
            origin_lon,
            origin_lat,
            pixel_size_x_m,
            pixel_size_y_m,
            crs: CrsTag::Wgs84Approx,
            anchor_lat: origin_lat,
        };
        t.validate()?;
        Ok(t)
    }

    /// Transform whose pixel grid of `height` x `width` is centered on (`lon`, `lat`).
    pub fn centered_on(
        lon: f64,
        lat: f64,
        height: usize,
        width: usize,
        pixel_size_x_m: f64,
        pixel_size_y_m: f64,
    ) -> Result<Self> {
        let probe = GeoTransform {
            origin_lon: lon,
            origin_lat: lat,
            pixel_size_x_m,
            pixel_size_y_m,
            crs: CrsTag::LocalMeters,
            anchor_lat: lat,
        };
        probe.validate()?;
        let (origin_lon, origin_lat) =
            probe.pixel_to_lonlat(-(width as f64) / 2.0, -(height as f64) / 2.0);
        Ok(GeoTransform {
            origin_lon,
            origin_lat,
            ..probe
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pixel_size_x_m", self.pixel_size_x_m),
            ("pixel_size_y_m", self.pixel_size_y_m),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::load(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if !self.origin_lon.is_finite() || !self.origin_lat.is_finite() {
            return Err(Error::load("origin", "non-finite origin"));
        }
        if !(self.anchor_lat.is_finite() && self.anchor_lat.abs() < 90.0) {
            return Err(Error::load(
                "anchor_lat",
                format!("must lie strictly within (-90, 90), got {}", self.anchor_lat),
            ));
        }
        Ok(())
    }

    pub fn meters_per_degree_lon(&self) -> f64 {
        METERS_PER_DEGREE * self.anchor_lat.to_radians().cos()
    }

    /// Planar offset of a point from the origin, in meters (east, south).
    pub fn lonlat_to_meters(&self, lon: f64, lat: f64) -> (f64, f64) {
        (
            (lon - self.origin_lon) * self.meters_per_degree_lon(),
            (self.origin_lat - lat) * METERS_PER_DEGREE,
        )
    }

    pub fn meters_to_lonlat(&self, east_m: f64, south_m: f64) -> (f64, f64) {
        (
            self.origin_lon + east_m / self.meters_per_degree_lon(),
            self.origin_lat - south_m / METERS_PER_DEGREE,
        )
    }

    /// Fractional (column, row) in pixel-edge coordinates.
    pub fn lonlat_to_pixel(&self, lon: f64, lat: f64) -> (f64, f64) {
        let (e, s) = self.lonlat_to_meters(lon, lat);
        (e / self.pixel_size_x_m, s / self.pixel_size_y_m)
    }

    pub fn pixel_to_lonlat(&self, col: f64, row: f64) -> (f64, f64) {
        self.meters_to_lonlat(col * self.pixel_size_x_m, row * self.pixel_size_y_m)
    }

    /// Same frame, origin moved to pixel (`col`, `row`).
    pub fn shifted(&self, col: usize, row: usize) -> GeoTransform {
        let (origin_lon, origin_lat) = self.pixel_to_lonlat(col as f64, row as f64);
        GeoTransform {
            origin_lon,
            origin_lat,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandKind {
    Panchromatic,
    /// One channel of an RGB image.
    Rgb,
    /// Nighttime radiance in nW/(cm²·sr).
    Radiance,
}

impl BandKind {
    pub fn is_imagery(self) -> bool {
        !matches!(self, BandKind::Radiance)
    }
}

/// Immutable single-band grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
    band_kind: BandKind,
    bit_depth: u8,
    acquired: NaiveDate,
    period: Option<YearMonth>,
    transform: GeoTransform,
}

impl RasterGrid {
    pub fn new(
        height: usize,
        width: usize,
        values: Vec<f64>,
        band_kind: BandKind,
        acquired: NaiveDate,
        transform: GeoTransform,
    ) -> Result<Self> {
        let grid = RasterGrid {
            height,
            width,
            values,
            band_kind,
            bit_depth: 32,
            acquired,
            period: None,
            transform,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Records the bit depth of the source the samples were normalized from.
    pub fn with_bit_depth(mut self, bit_depth: u8) -> Self {
        self.bit_depth = bit_depth;
        self
    }

    pub fn with_period(mut self, period: YearMonth) -> Self {
        self.period = Some(period);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::load(
                "height/width",
                format!("dimensions must be >= 1, got {}x{}", self.height, self.width),
            ));
        }
        let expected = self
            .height
            .checked_mul(self.width)
            .ok_or_else(|| Error::load("height/width", "dimension product overflows"))?;
        if self.values.len() != expected {
            return Err(Error::load(
                "payload length",
                format!("expected {expected} samples, got {}", self.values.len()),
            ));
        }
        self.transform.validate()?;
        for (i, &v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::load("values", format!("sample {i} is not finite")));
            }
            let ok = if self.band_kind.is_imagery() {
                (0.0..=1.0).contains(&v)
            } else {
                v >= 0.0
            };
            if !ok {
                return Err(Error::load(
                    "values",
                    format!("sample {i} = {v} outside the range for {:?}", self.band_kind),
                ));
            }
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn band_kind(&self) -> BandKind {
        self.band_kind
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn acquired(&self) -> NaiveDate {
        self.acquired
    }

    pub fn period(&self) -> Option<YearMonth> {
        self.period
    }

    pub fn transform(&self) -> &GeoTransform {
        &self.transform
    }

    /// Ground extent in square meters.
    pub fn extent_m2(&self) -> f64 {
        self.height as f64
            * self.transform.pixel_size_y_m
            * self.width as f64
            * self.transform.pixel_size_x_m
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Per-pixel `Y = 0.299 R + 0.587 G + 0.114 B` over three co-registered channels.
pub fn rgb_to_luminance(r: &RasterGrid, g: &RasterGrid, b: &RasterGrid) -> Result<RasterGrid> {
    for (name, other) in [("green", g), ("blue", b)] {
        if other.height != r.height || other.width != r.width {
            return Err(Error::DimensionMismatch(format!(
                "{name} channel is {}x{}, red is {}x{}",
                other.height, other.width, r.height, r.width
            )));
        }
        if other.transform != r.transform {
            return Err(Error::DimensionMismatch(format!(
                "{name} channel transform differs from red"
            )));
        }
    }
    for (name, ch) in [("red", r), ("green", g), ("blue", b)] {
        if let Some(v) = ch.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange(format!(
                "{name} channel sample {v} outside [0, 1]"
            )));
        }
    }
    let [wr, wg, wb] = LUMA_WEIGHTS;
    let values = r
        .values
        .iter()
        .zip(&g.values)
        .zip(&b.values)
        .map(|((&rv, &gv), &bv)| (wr * rv + wg * gv + wb * bv).clamp(0.0, 1.0))
        .collect();
    Ok(RasterGrid {
        values,
        band_kind: BandKind::Panchromatic,
        ..r.clone()
    })
}

/// Pixel window selected by a crop, in source pixel indices (half-open).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelWindow {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Resolves a `side_m` square centered at (`lon`, `lat`) to the pixels whose
/// centers fall inside it.
///
/// The window is out of bounds when that center rule would need pixels beyond
/// the raster; the error carries the geometric overshoot of each edge in meters.
pub fn crop_pixel_window(
    r: &RasterGrid,
    center_lon: f64,
    center_lat: f64,
    side_m: f64,
) -> Result<PixelWindow> {
    if !(side_m.is_finite() && side_m > 0.0) {
        return Err(Error::InvalidInput(format!("crop side must be > 0, got {side_m}")));
    }
    if !(center_lon.is_finite() && center_lat.is_finite()) {
        return Err(Error::InvalidInput("crop center is not finite".into()));
    }
    let t = &r.transform;
    let (cx, cy) = t.lonlat_to_pixel(center_lon, center_lat);
    let hx = side_m / 2.0 / t.pixel_size_x_m;
    let hy = side_m / 2.0 / t.pixel_size_y_m;
    let (x0, x1, y0, y1) = (cx - hx, cx + hx, cy - hy, cy + hy);

    // Pixel j is selected iff x0 <= j + 0.5 < x1.
    let first = |lo: f64| (lo - 0.5 - EDGE_EPS_PX).ceil();
    let end = |hi: f64| (hi - 0.5 - EDGE_EPS_PX).ceil();
    let (c0, c1) = (first(x0), end(x1));
    let (r0, r1) = (first(y0), end(y1));

    if c0 < 0.0 || r0 < 0.0 || c1 > r.width as f64 || r1 > r.height as f64 {
        let over = |v: f64, size: f64| v.max(0.0) * size;
        return Err(Error::CropOutOfBounds {
            left: over(-x0, t.pixel_size_x_m),
            right: over(x1 - r.width as f64, t.pixel_size_x_m),
            top: over(-y0, t.pixel_size_y_m),
            bottom: over(y1 - r.height as f64, t.pixel_size_y_m),
        });
    }
    if c1 <= c0 || r1 <= r0 {
        return Err(Error::InvalidInput(format!(
            "crop window of {side_m} m contains no pixel centers"
        )));
    }
    Ok(PixelWindow {
        row0: r0 as usize,
        col0: c0 as usize,
        rows: (r1 - r0) as usize,
        cols: (c1 - c0) as usize,
    })
}

/// Sub-grid covering a `side_m` x `side_m` square centered at (`lon`, `lat`).
pub fn crop_window(
    r: &RasterGrid,
    center_lon: f64,
    center_lat: f64,
    side_m: f64,
) -> Result<RasterGrid> {
    let w = crop_pixel_window(r, center_lon, center_lat, side_m)?;
    let mut values = Vec::with_capacity(w.rows * w.cols);
    for row in w.row0..w.row0 + w.rows {
        let start = row * r.width + w.col0;
        values.extend_from_slice(&r.values[start..start + w.cols]);
    }
    Ok(RasterGrid {
        height: w.rows,
        width: w.cols,
        values,
        transform: r.transform.shifted(w.col0, w.row0),
        ..r.clone()
    })
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
pub fn resample_bilinear(r: &RasterGrid, out_h: usize, out_w: usize) -> Result<RasterGrid> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidInput(format!(
            "resample target must be >= 1x1, got {out_h}x{out_w}"
        )));
    }
    let sy = r.height as f64 / out_h as f64;
    let sx = r.width as f64 / out_w as f64;
    let taps = |i: usize, scale: f64, n: usize| -> (usize, usize, f64) {
        let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, pos - lo as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|j| taps(j, sx, r.width)).collect();
    let mut values = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let (y0, y1, fy) = taps(i, sy, r.height);
        for &(x0, x1, fx) in &cols {
            let top = lerp(r.get(y0, x0), r.get(y0, x1), fx);
            let bottom = lerp(r.get(y1, x0), r.get(y1, x1), fx);
            values.push(lerp(top, bottom, fy));
        }
    }
    let transform = GeoTransform {
        pixel_size_x_m: r.transform.pixel_size_x_m * sx,
        pixel_size_y_m: r.transform.pixel_size_y_m * sy,
        ..r.transform
    };
    Ok(RasterGrid {
        height: out_h,
        width: out_w,
        values,
        transform,
        ..r.clone()
    })
}

// Clamped so the result never leaves [min(a, b), max(a, b)].
fn lerp(a: f64, b: f64, f: f64) -> f64 {
    (a + (b - a) * f).clamp(a.min(b), a.max(b))
}
