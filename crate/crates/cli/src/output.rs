//! CSV and SVG writers. All numbers go through `Display`, so identical inputs
//! always give identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use indusite::analytics::TrendReport;
use indusite::dataset::write_atomic;

pub fn num(v: f64) -> String {
    v.to_string()
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_csv<R, S>(path: &Path, header: &[&str], rows: R) -> anyhow::Result<()>
where
    R: IntoIterator<Item = Vec<S>>,
    S: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("CSV buffer: {e}"))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD_L: f64 = 80.0;
const PAD_R: f64 = 20.0;
const PAD_T: f64 = 40.0;
const PAD_B: f64 = 50.0;

/// Line chart of yearly means with a confidence band.
pub fn trend_svg(report: &TrendReport, title: &str, y_label: &str) -> String {
    let ys = &report.per_year;
    let lo = |s: &indusite::analytics::YearStat| s.ci.map_or(s.mean, |c| c.0);
    let hi = |s: &indusite::analytics::YearStat| s.ci.map_or(s.mean, |c| c.1);
    let mut ymin = ys.iter().map(lo).fold(f64::INFINITY, f64::min);
    let mut ymax = ys.iter().map(hi).fold(f64::NEG_INFINITY, f64::max);
    if ymax - ymin < 1e-9 {
        ymin -= 1.0;
        ymax += 1.0;
    }
    let pad = (ymax - ymin) * 0.05;
    let (ymin, ymax) = (ymin - pad, ymax + pad);
    let (x0, x1) = (report.first_year as f64, report.last_year as f64);
    let px = |year: i32| PAD_L + (year as f64 - x0) / (x1 - x0).max(1.0) * (W - PAD_L - PAD_R);
    let py = |v: f64| PAD_T + (ymax - v) / (ymax - ymin) * (H - PAD_T - PAD_B);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );

    let mut band: Vec<String> = ys.iter().map(|y| format!("{:.2},{:.2}", px(y.year), py(hi(y)))).collect();
    band.extend(ys.iter().rev().map(|y| format!("{:.2},{:.2}", px(y.year), py(lo(y)))));
    let _ = writeln!(
        s,
        r##"<polygon points="{}" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>"##,
        band.join(" ")
    );
    let line: Vec<String> = ys.iter().map(|y| format!("{:.2},{:.2}", px(y.year), py(y.mean))).collect();
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#08519c" stroke-width="2"/>"##,
        line.join(" ")
    );
    for y in ys {
        let _ = writeln!(
            s,
            r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#08519c"/>"##,
            px(y.year),
            py(y.mean)
        );
    }

    let (bx, by) = (PAD_L, H - PAD_B);
    let _ = writeln!(
        s,
        r#"<line x1="{bx}" y1="{PAD_T}" x2="{bx}" y2="{by}" stroke="black"/><line x1="{bx}" y1="{by}" x2="{:.1}" y2="{by}" stroke="black"/>"#,
        W - PAD_R
    );
    for y in ys {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(y.year),
            by + 18.0,
            y.year
        );
    }
    for k in 0..=4 {
        let v = ymin + (ymax - ymin) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.2}" text-anchor="end">{:.0}</text>"#,
            bx - 6.0,
            py(v) + 4.0,
            v
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
