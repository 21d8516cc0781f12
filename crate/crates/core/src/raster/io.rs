//! Canonical raster container and grayscale image importers.
//!
//! Container layout: one UTF-8 JSON header line terminated by `\n`, then
//! `height * width` little-endian IEEE-754 `f32` samples in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use image::DynamicImage;
use serde::{Deserialize, Serialize};

use super::{BandKind, GeoTransform, RasterGrid};
use crate::error::{Error, Result};
use crate::period::YearMonth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterHeader {
    pub height: usize,
    pub width: usize,
    pub band_kind: BandKind,
    pub bit_depth: u8,
    pub acquired: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<YearMonth>,
    pub transform: GeoTransform,
}

impl RasterHeader {
    fn of(grid: &RasterGrid) -> Self {
        RasterHeader {
            height: grid.height,
            width: grid.width,
            band_kind: grid.band_kind,
            bit_depth: grid.bit_depth,
            acquired: grid.acquired,
            period: grid.period,
            transform: grid.transform,
        }
    }
}

/// Serializes a grid into the canonical container bytes.
pub fn write_raster(grid: &RasterGrid) -> Vec<u8> {
    let header = serde_json::to_string(&RasterHeader::of(grid)).expect("header serializes");
    let mut out = Vec::with_capacity(header.len() + 1 + grid.values.len() * 4);
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    for &v in &grid.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn save_raster(grid: &RasterGrid, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&write_raster(grid))
        .map_err(|e| Error::io(path, e))
}

/// Decodes container bytes.
pub fn read_raster(bytes: &[u8]) -> Result<RasterGrid> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::load("header", "missing newline terminator"))?;
    let text = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::load("header", "header is not UTF-8"))?;
    let header: RasterHeader =
        serde_json::from_str(text).map_err(|e| Error::load("header", e.to_string()))?;
    if header.band_kind == BandKind::Radiance && header.period.is_none() {
        return Err(Error::load("period", "radiance grids require a period"));
    }
    let payload = &bytes[nl + 1..];
    let expected = header
        .height
        .checked_mul(header.width)
        .ok_or_else(|| Error::load("height/width", "dimension product overflows"))?;
    if payload.len() != expected * 4 {
        return Err(Error::load(
            "payload length",
            format!(
                "header declares {expected} samples ({} bytes), payload has {} bytes",
                expected * 4,
                payload.len()
            ),
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let mut grid = RasterGrid::new(
        header.height,
        header.width,
        values,
        header.band_kind,
        header.acquired,
        header.transform,
    )?
    .with_bit_depth(header.bit_depth);
    grid.period = header.period;
    Ok(grid)
}

pub fn load_raster(path: &Path) -> Result<RasterGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_raster(&bytes)
}

/// Result of importing a PNG or PGM file.
#[derive(Debug, Clone)]
pub enum ImportedImage {
    Gray(RasterGrid),
    /// Red, green and blue channels, each normalized to `[0, 1]`.
    Rgb([RasterGrid; 3]),
}

/// Imports an 8/16-bit grayscale (or RGB) PNG or a PGM into normalized grids.
///
/// Neither format carries georeferencing, so the caller supplies the
/// transform and acquisition date.
pub fn import_image(
    path: &Path,
    transform: GeoTransform,
    acquired: NaiveDate,
) -> Result<ImportedImage> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Import(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = |values: Vec<f64>, depth: u8, kind: BandKind| {
        RasterGrid::new(h, w, values, kind, acquired, transform).map(|g| g.with_bit_depth(depth))
    };
    match img {
        DynamicImage::ImageLuma8(buf) => {
            let v = buf.into_raw().into_iter().map(|p| p as f64 / 255.0).collect();
            Ok(ImportedImage::Gray(gray(v, 8, BandKind::Panchromatic)?))
        }
        DynamicImage::ImageLuma16(buf) => {
            let v = buf
                .into_raw()
                .into_iter()
                .map(|p| p as f64 / 65535.0)
                .collect();
            Ok(ImportedImage::Gray(gray(v, 16, BandKind::Panchromatic)?))
        }
        DynamicImage::ImageRgb8(buf) => {
            let raw = buf.into_raw();
            let ch = |k: usize| -> Result<RasterGrid> {
                let v = raw.iter().skip(k).step_by(3).map(|&p| p as f64 / 255.0).collect();
                gray(v, 8, BandKind::Rgb)
            };
            Ok(ImportedImage::Rgb([ch(0)?, ch(1)?, ch(2)?]))
        }
        DynamicImage::ImageRgb16(buf) => {
            let raw = buf.into_raw();
            let ch = |k: usize| -> Result<RasterGrid> {
                let v = raw
                    .iter()
                    .skip(k)
                    .step_by(3)
                    .map(|&p| p as f64 / 65535.0)
                    .collect();
                gray(v, 16, BandKind::Rgb)
            };
            Ok(ImportedImage::Rgb([ch(0)?, ch(1)?, ch(2)?]))
        }
        other => Err(Error::Import(format!(
            "{}: unsupported pixel layout {:?}",
            path.display(),
            other.color()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t() -> GeoTransform {
        GeoTransform::wgs84(116.25, 39.9, 0.5, 0.5).unwrap()
    }

    fn d() -> NaiveDate {
        NaiveDate::from_ymd_opt(2019, 3, 14).unwrap()
    }

    #[test]
    fn two_by_two_round_trip() {
        let g = RasterGrid::new(2, 2, vec![0.0, 0.5, 0.5, 1.0], BandKind::Panchromatic, d(), t())
            .unwrap();
        let back = read_raster(&write_raster(&g)).unwrap();
        assert_eq!(back.height(), 2);
        assert_eq!(back.width(), 2);
        assert_eq!(back.values(), &[0.0, 0.5, 0.5, 1.0]);
        assert_eq!(back, g);
    }

    #[test]
    fn short_payload_is_rejected() {
        let g = RasterGrid::new(2, 2, vec![0.0, 0.5, 0.5, 1.0], BandKind::Panchromatic, d(), t())
            .unwrap();
        let mut bytes = write_raster(&g);
        bytes.truncate(bytes.len() - 4);
        let err = read_raster(&bytes).unwrap_err();
        assert!(err.to_string().contains("payload length"), "{err}");
    }

    #[test]
    fn malformed_header_names_field() {
        let err = read_raster(b"{\"height\": 2}\n").unwrap_err();
        assert!(err.to_string().contains("header"), "{err}");
        let err = read_raster(b"no newline").unwrap_err();
        assert!(err.to_string().contains("header"));
    }

    #[test]
    fn non_finite_sample_is_rejected() {
        let g = RasterGrid::new(1, 2, vec![0.0, 0.0], BandKind::Radiance, d(), t())
            .unwrap()
            .with_period(YearMonth::new(2019, 3).unwrap());
        let mut bytes = write_raster(&g);
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = read_raster(&bytes).unwrap_err();
        assert!(err.to_string().contains("values"), "{err}");
    }

    #[test]
    fn radiance_header_carries_period() {
        let g = RasterGrid::new(1, 1, vec![42.5], BandKind::Radiance, d(), t())
            .unwrap()
            .with_period(YearMonth::new(2019, 3).unwrap());
        let bytes = write_raster(&g);
        let header = std::str::from_utf8(&bytes[..bytes.iter().position(|&b| b == b'\n').unwrap()])
            .unwrap();
        assert!(header.contains("\"band_kind\":\"radiance\""));
        assert!(header.contains("\"period\":\"2019-03\""));
        assert_eq!(read_raster(&bytes).unwrap().period(), g.period());
    }

    #[test]
    fn import_gray_png_and_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let png = dir.path().join("a.png");
        image::GrayImage::from_raw(3, 2, vec![0, 51, 102, 153, 204, 255])
            .unwrap()
            .save(&png)
            .unwrap();
        let ImportedImage::Gray(g) = import_image(&png, t(), d()).unwrap() else {
            panic!("expected gray")
        };
        assert_eq!((g.height(), g.width(), g.bit_depth()), (2, 3, 8));
        assert_eq!(g.values(), &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);

        let png16 = dir.path().join("b.png");
        image::ImageBuffer::<image::Luma<u16>, _>::from_raw(2, 1, vec![0u16, 65535])
            .unwrap()
            .save(&png16)
            .unwrap();
        let ImportedImage::Gray(g) = import_image(&png16, t(), d()).unwrap() else {
            panic!("expected gray")
        };
        assert_eq!(g.bit_depth(), 16);
        assert_eq!(g.values(), &[0.0, 1.0]);

        let pgm = dir.path().join("c.pgm");
        fs::write(&pgm, "P2\n2 2\n255\n0 255\n51 102\n").unwrap();
        let ImportedImage::Gray(g) = import_image(&pgm, t(), d()).unwrap() else {
            panic!("expected gray")
        };
        assert_eq!(g.values(), &[0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn import_rgb_png_splits_channels() {
        let dir = tempfile::tempdir().unwrap();
        let png = dir.path().join("rgb.png");
        image::RgbImage::from_raw(1, 1, vec![255, 0, 51]).unwrap().save(&png).unwrap();
        let ImportedImage::Rgb([r, g, b]) = import_image(&png, t(), d()).unwrap() else {
            panic!("expected rgb")
        };
        assert_eq!(r.values(), &[1.0]);
        assert_eq!(g.values(), &[0.0]);
        assert_eq!(b.values(), &[0.2]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn canonical_bytes_round_trip(
            h in 1usize..12,
            w in 1usize..12,
            seed in any::<u64>(),
            radiance in any::<bool>(),
        ) {
            let mut s = seed;
            let values: Vec<f64> = (0..h * w)
                .map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let u = (s >> 40) as f32 / (1u64 << 24) as f32;
                    (if radiance { u * 80.0 } else { u }) as f64
                })
                .collect();
            let kind = if radiance { BandKind::Radiance } else { BandKind::Panchromatic };
            let mut g = RasterGrid::new(h, w, values, kind, d(), t()).unwrap();
            if radiance {
                g = g.with_period(YearMonth::new(2015, 8).unwrap());
            }
            let bytes = write_raster(&g);
            let loaded = read_raster(&bytes).unwrap();
            prop_assert_eq!(write_raster(&loaded), bytes);
            prop_assert_eq!(loaded, g);
        }
    }
}
