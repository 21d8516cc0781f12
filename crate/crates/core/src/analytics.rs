//! Regression and trend statistics over labeled observations.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::SiteSeries;
use crate::error::{Error, Result};

pub const DEFAULT_CI_LEVEL: f64 = 0.95;

/// Ordinary least-squares line `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Least-squares fit over `(x, y)` points.
///
/// R² is `1 - SS_res / SS_tot`; a constant `y` gives slope 0 and R² = 1.
pub fn ols_fit(points: &[(f64, f64)]) -> Result<LinearFit> {
    let n = points.len();
    if n < 2 {
        return Err(Error::DegenerateFit(format!("need at least 2 points, got {n}")));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidInput("non-finite regression input".into()));
    }
    let (x0, y0) = points[0];
    if points.iter().all(|&(x, _)| x == x0) {
        return Err(Error::DegenerateFit("all x values are identical".into()));
    }
    if points.iter().all(|&(_, y)| y == y0) {
        return Ok(LinearFit {
            slope: 0.0,
            intercept: y0,
            r_squared: 1.0,
            n,
        });
    }
    let nf = n as f64;
    let x_mean = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let y_mean = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in points {
        let dx = x - x_mean;
        sxx += dx * dx;
        sxy += dx * (y - y_mean);
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for &(x, y) in points {
        let r = y - (y_mean + slope * (x - x_mean));
        ss_res += r * r;
        ss_tot += (y - y_mean) * (y - y_mean);
    }
    let r_squared = if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
        n,
    })
}

/// Bridge model: structural area from a radiance value.
pub fn predict_area_from_ntl(fit: &LinearFit, ntl: f64) -> f64 {
    fit.predict(ntl)
}

/// Mean absolute error between predictions and labels.
pub fn l1_score(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidInput("L1 score of empty input".into()));
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(p, l)| (p - l).abs())
        .sum();
    Ok(total / predictions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SdConvention {
    /// Divide by n.
    #[default]
    Population,
    /// Divide by n - 1.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

pub fn dataset_summary(values: &[f64], convention: SdConvention) -> Result<Summary> {
    let count = values.len();
    if count == 0 {
        return Err(Error::InvalidInput("summary of empty input".into()));
    }
    let mean = values.iter().sum::<f64>() / count as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let denom = match convention {
        SdConvention::Population => count as f64,
        SdConvention::Sample if count > 1 => (count - 1) as f64,
        SdConvention::Sample => {
            return Err(Error::InvalidInput(
                "sample standard deviation needs at least 2 values".into(),
            ))
        }
    };
    Ok(Summary {
        mean,
        sd: (ss / denom).sqrt(),
        count,
    })
}

/// Two-sided Student-t interval for a mean; `None` below two samples.
pub fn mean_ci(values: &[f64], level: f64) -> Result<Option<(f64, f64)>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let n = values.len();
    if n < 2 {
        return Ok(None);
    }
    let s = dataset_summary(values, SdConvention::Sample)?;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - (1.0 - level) / 2.0);
    let half = t * s.sd / (n as f64).sqrt();
    Ok(Some((s.mean - half, s.mean + half)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct YearStat {
    pub year: i32,
    pub mean: f64,
    /// Confidence bounds; absent for single-observation years.
    pub ci: Option<(f64, f64)>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendReport {
    pub per_year: Vec<YearStat>,
    pub ci_level: f64,
    /// Fit over the raw (year, value) observations, not the yearly means.
    pub fit: LinearFit,
    pub pct_change_per_year: f64,
    pub pct_change_total: f64,
    pub first_year: i32,
    pub last_year: i32,
}

/// Yearly means with confidence bands plus a linear percent-change trend.
///
/// Percent change per year is the fitted slope relative to the fitted value
/// at the first year; the total is that rate times the number of year
/// intervals (linear, not compounded).
pub fn yearly_trend(observations: &[(i32, f64)], ci_level: f64) -> Result<TrendReport> {
    let mut groups: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for &(year, v) in observations {
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite value in year {year}")));
        }
        groups.entry(year).or_default().push(v);
    }
    if groups.len() < 2 {
        return Err(Error::DegenerateTrend(format!(
            "need at least 2 distinct years, got {}",
            groups.len()
        )));
    }
    let per_year = groups
        .iter()
        .map(|(&year, vals)| {
            Ok(YearStat {
                year,
                mean: vals.iter().sum::<f64>() / vals.len() as f64,
                ci: mean_ci(vals, ci_level)?,
                n: vals.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let first_year = *groups.keys().next().expect("non-empty");
    let last_year = *groups.keys().next_back().expect("non-empty");
    let points: Vec<(f64, f64)> = observations
        .iter()
        .map(|&(y, v)| (y as f64, v))
        .collect();
    let fit = ols_fit(&points)?;
    let baseline = fit.predict(first_year as f64);
    if baseline == 0.0 {
        return Err(Error::DegenerateTrend(
            "fitted value at the first year is zero; percent change undefined".into(),
        ));
    }
    let pct_change_per_year = 100.0 * fit.slope / baseline;
    let pct_change_total = pct_change_per_year * (last_year - first_year) as f64;
    Ok(TrendReport {
        per_year,
        ci_level,
        fit,
        pct_change_per_year,
        pct_change_total,
        first_year,
        last_year,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteChange {
    pub site_id: String,
    pub oldest: NaiveDate,
    pub newest: NaiveDate,
    pub oldest_value: f64,
    pub newest_value: f64,
    pub delta: f64,
}

/// Value at the newest observation minus value at the oldest.
///
/// `values` are aligned with `series.observations`.
pub fn site_change(series: &SiteSeries, values: &[f64]) -> Result<SiteChange> {
    let obs = &series.observations;
    if obs.len() != values.len() {
        return Err(Error::InvalidInput(format!(
            "{} values for {} observations of site {}",
            values.len(),
            obs.len(),
            series.site.id
        )));
    }
    if obs.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "site {} has {} observation(s); change needs 2",
            series.site.id,
            obs.len()
        )));
    }
    let mut order: Vec<usize> = (0..obs.len()).collect();
    order.sort_by_key(|&i| obs[i].acquired);
    if order.windows(2).any(|w| obs[w[0]].acquired == obs[w[1]].acquired) {
        return Err(Error::InvalidInput(format!(
            "site {} has observations sharing a date",
            series.site.id
        )));
    }
    let (first, last) = (order[0], order[order.len() - 1]);
    Ok(SiteChange {
        site_id: series.site.id.clone(),
        oldest: obs[first].acquired,
        newest: obs[last].acquired,
        oldest_value: values[first],
        newest_value: values[last],
        delta: values[last] - values[first],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Observation, Site, SiteClass};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
    }

    // Independent route: 2x2 normal equations by Cramer's rule on raw sums.
    fn normal_equations(points: &[(f64, f64)]) -> (f64, f64) {
        let n = points.len() as f64;
        let sx: f64 = points.iter().map(|p| p.0).sum();
        let sy: f64 = points.iter().map(|p| p.1).sum();
        let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
        let det = n * sxx - sx * sx;
        let b0 = (sy * sxx - sx * sxy) / det;
        let m = (n * sxy - sx * sy) / det;
        (m, b0)
    }

    #[test]
    fn ols_examples() {
        let f = ols_fit(&[(0.0, 0.0), (1.0, 2.0), (2.0, 4.0)]).unwrap();
        assert_eq!((f.slope, f.intercept, f.r_squared, f.n), (2.0, 0.0, 1.0, 3));
        let f = ols_fit(&[(0.0, 1.0), (1.0, 1.0), (2.0, 1.0)]).unwrap();
        assert_eq!((f.slope, f.intercept, f.r_squared), (0.0, 1.0, 1.0));
        assert!(matches!(
            ols_fit(&[(3.0, 1.0), (3.0, 2.0)]),
            Err(Error::DegenerateFit(_))
        ));
        assert!(ols_fit(&[(1.0, 1.0)]).is_err());
    }

    #[test]
    fn ols_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 3.0).unwrap();
        let points: Vec<(f64, f64)> = (0..200)
            .map(|_| {
                let x: f64 = rng.random_range(-50.0..50.0);
                (x, 1.7 * x + 12.0 + noise.sample(&mut rng))
            })
            .collect();
        let fit = ols_fit(&points).unwrap();
        let (m, b0) = normal_equations(&points);
        assert!(close(fit.slope, m, 1e-9));
        assert!(close(fit.intercept, b0, 1e-9));
        assert!(fit.r_squared > 0.9 && fit.r_squared < 1.0);
    }

    #[test]
    fn ols_residual_conditions_and_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let points: Vec<(f64, f64)> = (0..60)
            .map(|_| {
                let x: f64 = rng.random_range(0.0..10.0);
                (x, -0.4 * x + rng.random_range(-2.0..2.0))
            })
            .collect();
        let f = ols_fit(&points).unwrap();
        let resid: Vec<f64> = points.iter().map(|&(x, y)| y - f.predict(x)).collect();
        let scale: f64 = points.iter().map(|p| p.1.abs()).sum();
        assert!(resid.iter().sum::<f64>().abs() < 1e-9 * scale);
        let dot: f64 = points.iter().zip(&resid).map(|(p, r)| p.0 * r).sum();
        assert!(dot.abs() < 1e-9 * scale * 10.0);

        let scaled: Vec<_> = points.iter().map(|&(x, y)| (x, 3.5 * y)).collect();
        let g = ols_fit(&scaled).unwrap();
        assert!(close(g.slope, 3.5 * f.slope, 1e-12));
        assert!(close(g.intercept, 3.5 * f.intercept, 1e-12));
        assert!(close(g.r_squared, f.r_squared, 1e-12));

        let shifted: Vec<_> = points.iter().map(|&(x, y)| (x + 2018.0, y)).collect();
        let h = ols_fit(&shifted).unwrap();
        assert!(close(h.slope, f.slope, 1e-9));
        assert!(close(h.r_squared, f.r_squared, 1e-9));
    }

    #[test]
    fn bridge_prediction() {
        let fit = LinearFit {
            slope: 2.0,
            intercept: 1.0,
            r_squared: 1.0,
            n: 2,
        };
        assert_eq!(predict_area_from_ntl(&fit, 0.0), 1.0);
        assert_eq!(predict_area_from_ntl(&fit, 5.0), 11.0);
    }

    #[test]
    fn weak_bridge_fit_under_heavy_noise() {
        // Area weakly tied to radiance, as observed for coarse composites.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 27_000.0).unwrap();
        let points: Vec<(f64, f64)> = (0..181)
            .map(|_| {
                let ntl: f64 = rng.random_range(0.0..40.0);
                (ntl, 48_000.0 + 250.0 * ntl + noise.sample(&mut rng))
            })
            .collect();
        let fit = ols_fit(&points).unwrap();
        assert!(fit.r_squared < 0.3, "R² = {}", fit.r_squared);
    }

    #[test]
    fn l1_examples() {
        assert_eq!(l1_score(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(l1_score(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.5);
        assert!(l1_score(&[1.0], &[1.0, 2.0]).is_err());
        assert!(l1_score(&[], &[]).is_err());
    }

    #[test]
    fn l1_random_and_triangle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut v = || -> Vec<f64> { (0..500).map(|_| rng.random_range(-1e4..1e4)).collect() };
        let (a, b, c) = (v(), v(), v());
        let mut oracle = 0.0;
        for i in 0..a.len() {
            let d = a[i] - b[i];
            oracle += if d < 0.0 { -d } else { d };
        }
        oracle /= a.len() as f64;
        assert!((l1_score(&a, &b).unwrap() - oracle).abs() <= 1e-12 * oracle);
        let ac = l1_score(&a, &c).unwrap();
        assert!(ac <= l1_score(&a, &b).unwrap() + l1_score(&b, &c).unwrap());
    }

    #[test]
    fn summary_examples() {
        let s = dataset_summary(&[5.0], SdConvention::Population).unwrap();
        assert_eq!((s.mean, s.sd, s.count), (5.0, 0.0, 1));
        let s = dataset_summary(&[2.0, 4.0], SdConvention::Population).unwrap();
        assert_eq!((s.mean, s.sd), (3.0, 1.0));
        let s = dataset_summary(&[2.0, 4.0], SdConvention::Sample).unwrap();
        assert!((s.sd - 2f64.sqrt()).abs() < 1e-15);
        assert!(dataset_summary(&[], SdConvention::Population).is_err());
    }

    #[test]
    fn summary_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vals: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..100_000.0)).collect();
        let mut sum = 0.0;
        for v in &vals {
            sum += v;
        }
        let mean = sum / vals.len() as f64;
        let mut ss = 0.0;
        for v in &vals {
            ss += (v - mean).powi(2);
        }
        let sd = (ss / vals.len() as f64).sqrt();
        let s = dataset_summary(&vals, SdConvention::Population).unwrap();
        assert!(close(s.mean, mean, 1e-10));
        assert!(close(s.sd, sd, 1e-10));
    }

    #[test]
    fn t_interval_known_value() {
        // n = 2, values 0 and 2: mean 1, s = sqrt(2), t(0.975, 1) = 12.7062
        let (lo, hi) = mean_ci(&[0.0, 2.0], 0.95).unwrap().unwrap();
        let half = 12.706_204_736_174_7 * 2f64.sqrt() / 2f64.sqrt();
        assert!((hi - 1.0 - half).abs() < 1e-6);
        assert!((1.0 - lo - half).abs() < 1e-6);
        assert_eq!(mean_ci(&[1.0], 0.95).unwrap(), None);
    }

    #[test]
    fn ci_width_shrinks_with_root_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dist = Normal::new(50_000.0, 20_000.0).unwrap();
        let mut mean_width = |n: usize| {
            let reps = 400;
            let mut total = 0.0;
            for _ in 0..reps {
                let vals: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
                let (lo, hi) = mean_ci(&vals, 0.95).unwrap().unwrap();
                total += hi - lo;
            }
            total / reps as f64
        };
        let (w10, w40, w160) = (mean_width(10), mean_width(40), mean_width(160));
        for (ratio, label) in [(w10 / w40, "10/40"), (w40 / w160, "40/160")] {
            assert!(
                (ratio / 2.0 - 1.0).abs() < 0.15,
                "width ratio {label} = {ratio}, expected ~2"
            );
        }
    }

    #[test]
    fn constant_trend_is_flat() {
        let obs: Vec<(i32, f64)> = (2018..=2021)
            .flat_map(|y| [(y, 40_000.0), (y, 40_000.0)])
            .collect();
        let r = yearly_trend(&obs, 0.95).unwrap();
        assert_eq!(r.fit.slope, 0.0);
        assert_eq!(r.pct_change_per_year, 0.0);
        assert_eq!(r.pct_change_total, 0.0);
        assert_eq!(r.per_year.len(), 4);
        assert_eq!(r.per_year[0].ci, Some((40_000.0, 40_000.0)));
    }

    #[test]
    fn trend_total_is_rate_times_intervals() {
        let base = 80_000.0;
        let obs: Vec<(i32, f64)> = (2018..=2021)
            .map(|y| (y, base * (1.0 - 0.075 * (y - 2018) as f64)))
            .collect();
        let r = yearly_trend(&obs, 0.95).unwrap();
        assert!((r.pct_change_per_year + 7.5).abs() < 1e-9);
        assert!((r.pct_change_total + 22.5).abs() < 1e-9);
        assert_eq!(r.pct_change_total, r.pct_change_per_year * 3.0);
    }

    #[test]
    fn trend_recovers_constructed_slope() {
        let (s, b) = (1_250.0, 31_000.0);
        let obs: Vec<(i32, f64)> = (2010..=2021)
            .flat_map(|y| {
                let v = b + s * (y - 2010) as f64;
                [(y, v - 500.0), (y, v + 500.0)]
            })
            .collect();
        let r = yearly_trend(&obs, 0.95).unwrap();
        assert!((r.pct_change_per_year - 100.0 * s / b).abs() < 1e-9);
        for ys in &r.per_year {
            let (lo, hi) = ys.ci.unwrap();
            assert!(lo <= ys.mean && ys.mean <= hi);
        }
    }

    #[test]
    fn single_year_trend_is_degenerate() {
        assert!(matches!(
            yearly_trend(&[(2020, 1.0), (2020, 2.0)], 0.95),
            Err(Error::DegenerateTrend(_))
        ));
    }

    fn series(points: &[(i32, u32, f64)]) -> (SiteSeries, Vec<f64>) {
        let site = Site {
            id: "s1".into(),
            name: "Test".into(),
            lon: 110.0,
            lat: 30.0,
            class: SiteClass::Factory,
        };
        let observations = points
            .iter()
            .map(|&(y, m, _)| Observation::new("s1", NaiveDate::from_ymd_opt(y, m, 1).unwrap(), "r"))
            .collect();
        let values = points.iter().map(|p| p.2).collect();
        (SiteSeries { site, observations }, values)
    }

    #[test]
    fn site_change_examples() {
        let (s, v) = series(&[(2020, 1, 350.0), (2010, 1, 100.0)]);
        assert_eq!(site_change(&s, &v).unwrap().delta, 250.0);
        let (s, v) = series(&[(2010, 1, 7.0), (2015, 1, 90.0), (2020, 1, 7.0)]);
        assert_eq!(site_change(&s, &v).unwrap().delta, 0.0);
        let (s, v) = series(&[(2010, 1, 7.0)]);
        assert!(site_change(&s, &v).is_err());
        let (s, v) = series(&[(2010, 1, 7.0), (2010, 1, 8.0)]);
        assert!(site_change(&s, &v).is_err());
    }
}
