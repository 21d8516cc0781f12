use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use chrono::NaiveDate;

use indusite::dataset::{Catalog, Observation, Site, SiteClass};
use indusite::masks::{InstanceMask, MaskSet, Provenance};
use indusite::raster::{load_raster, save_raster, BandKind, GeoTransform, RasterGrid};
use indusite::synth::perturb_masks_with_targets;

fn indusite(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_indusite"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

fn d(y: i32, m: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, day).unwrap()
}

#[test]
fn convert_reports_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let t = GeoTransform::centered_on(10.0, 45.0, 40, 40, 25.0, 25.0).unwrap();
    let mut jobs = String::from("output,input,green,blue,center_lon,center_lat\n");
    for i in 0..9 {
        let v: Vec<f64> = (0..1600).map(|k| ((k + i) % 17) as f64 / 16.0).collect();
        let g = RasterGrid::new(40, 40, v, BandKind::Panchromatic, d(2015, 1, 1), t).unwrap();
        save_raster(&g, &dir.path().join(format!("in{i}.raster"))).unwrap();
        jobs.push_str(&format!("out{i}.raster,in{i}.raster,,,10.0,45.0\n"));
    }
    fs::write(dir.path().join("bad.raster"), b"{\"height\": 3}\nxx").unwrap();
    jobs.push_str("out9.raster,bad.raster,,,,\n");
    fs::write(dir.path().join("jobs.csv"), jobs).unwrap();
    let out = dir.path().join("out");

    let o = indusite(&["convert", "--jobs", p(&dir.path().join("jobs.csv")), "--out", p(&out), "--resample", "20x16"]);
    assert_eq!(o.status.code(), Some(1));
    let rows = csv_rows(&out.join("convert_results.csv"));
    assert_eq!(rows.iter().filter(|r| r[1] == "ok").count(), 9);
    assert_eq!(rows[9][1], "failed");
    let g = load_raster(&out.join("out0.raster")).unwrap();
    assert_eq!((g.height(), g.width()), (20, 16));
    assert!(out.join("run_config.json").exists());
}

#[test]
fn convert_rgb_triple_to_luminance() {
    let dir = tempfile::tempdir().unwrap();
    let t = GeoTransform::centered_on(10.0, 45.0, 2, 2, 1.0, 1.0).unwrap();
    let band = |v: [f64; 4], name: &str| {
        let g = RasterGrid::new(2, 2, v.to_vec(), BandKind::Rgb, d(2015, 1, 1), t).unwrap();
        save_raster(&g, &dir.path().join(name)).unwrap();
    };
    band([1.0, 0.0, 0.0, 0.5], "r.raster");
    band([0.0, 1.0, 0.0, 0.5], "g.raster");
    band([0.0, 0.0, 1.0, 0.5], "b.raster");
    fs::write(dir.path().join("jobs.csv"), "output,input,green,blue\npan.raster,r.raster,g.raster,b.raster\n").unwrap();
    let out = dir.path().join("out");
    let o = indusite(&["convert", "--jobs", p(&dir.path().join("jobs.csv")), "--out", p(&out), "--resample", "2x2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let g = load_raster(&out.join("pan.raster")).unwrap();
    assert_eq!(g.band_kind(), BandKind::Panchromatic);
    // Stored samples are f32.
    for (v, want) in g.values().iter().zip([0.299, 0.587, 0.114, 0.5]) {
        assert_eq!(*v, want as f32 as f64);
    }
}

#[test]
fn eval_reproduces_constructed_precision() {
    let dir = tempfile::tempdir().unwrap();
    let (k, m) = (7, 3);
    let inst: Vec<_> = (0..k + m)
        .map(|i| InstanceMask::rect(64, 64, (i / 5) * 20 + 2, (i % 5) * 12 + 1, 10, 9).unwrap())
        .collect();
    let truths = MaskSet::new(64, 64, inst, Provenance::GroundTruthGeocoded).unwrap();
    let targets: Vec<f64> = (0..k + m).map(|i| if i < k { 0.8 } else { 0.2 }).collect();
    let (preds, got) = perturb_masks_with_targets(&truths, &targets, 1).unwrap();
    assert!(got[..k].iter().all(|&v| v >= 0.5) && got[k..].iter().all(|&v| v < 0.5));
    truths.save(&dir.path().join("t.json")).unwrap();
    preds.save(&dir.path().join("p.json")).unwrap();
    MaskSet::empty(64, 64, Provenance::ModelPrediction).unwrap().save(&dir.path().join("none.json")).unwrap();
    fs::write(dir.path().join("pairs.csv"), "pred,truth,year\np.json,t.json,2016\nnone.json,t.json,2017\n").unwrap();
    let out = dir.path().join("eval");

    let o = indusite(&["eval", "--pairs", p(&dir.path().join("pairs.csv")), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let overall = csv_rows(&out.join("ap_overall.csv"));
    let at = |t: &str| overall.iter().find(|r| r[0] == t).unwrap()[5].parse::<f64>().unwrap();
    assert_eq!(at("0.5"), 7.0 / 10.0);
    assert!(at("0.1") >= at("0.3") && at("0.3") >= at("0.5"));
    let by_year = csv_rows(&out.join("ap_by_year.csv"));
    let empty = by_year.iter().find(|r| r[0] == "0.5" && r[1] == "2017").unwrap();
    assert_eq!(empty[3], "1");
    assert_eq!(empty[6], "");
    assert_eq!(empty[7], "true");
}

fn labeled_catalog(dir: &Path, rows: &[(&str, NaiveDate, f64, Option<f64>)]) {
    let mut sites: Vec<Site> = rows
        .iter()
        .map(|r| Site { id: r.0.into(), name: r.0.into(), lon: 1.0, lat: 2.0, class: SiteClass::Port })
        .collect();
    sites.dedup_by(|a, b| a.id == b.id);
    let observations = rows
        .iter()
        .map(|&(id, date, area, ntl)| {
            let mut o = Observation::new(id, date, "x.raster");
            o.area_label_m2 = Some(area);
            o.ntl_label = ntl;
            o
        })
        .collect();
    Catalog { sites, observations }.save(dir).unwrap();
}

#[test]
fn trend_constant_fleet_and_collinear_bridge() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = Vec::new();
    for (i, id) in ["a", "b", "c"].iter().enumerate() {
        for y in 2016..2020 {
            let ntl = (i * 10 + (y - 2016) as usize) as f64;
            rows.push((*id, d(y, 6, 1), 40_000.0, Some(ntl)));
        }
    }
    labeled_catalog(dir.path(), &rows);
    let out = dir.path().join("trend");
    let o = indusite(&["trend", "--catalog", p(dir.path()), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for r in csv_rows(&out.join("trend_yearly.csv")) {
        assert_eq!((r[6].as_str(), r[7].as_str()), ("0", "0"));
    }
    assert!(out.join("trend.svg").exists());

    let mut rows = Vec::new();
    for k in 0..8 {
        let ntl = k as f64 * 1.5;
        rows.push(("s", d(2014 + k, 3, 1), 2.0 * ntl + 5.0, Some(ntl)));
    }
    let dir2 = tempfile::tempdir().unwrap();
    labeled_catalog(dir2.path(), &rows);
    let o = indusite(&["trend", "--catalog", p(dir2.path())]);
    assert!(o.status.success());
    let fit = &csv_rows(&dir2.path().join("bridge_fit.csv"))[0];
    let f = |i: usize| fit[i].parse::<f64>().unwrap();
    assert!((f(0) - 2.0).abs() < 1e-12 && (f(1) - 5.0).abs() < 1e-9 && (f(2) - 1.0).abs() < 1e-12);
}

#[test]
fn trend_declining_fleet_and_single_year() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = Vec::new();
    for id in ["a", "b"] {
        for (k, y) in (2018..=2021).enumerate() {
            rows.push((id, d(y, 1, 1), 100_000.0 * (1.0 - 0.075 * k as f64), None));
        }
    }
    labeled_catalog(dir.path(), &rows);
    let o = indusite(&["trend", "--catalog", p(dir.path())]);
    assert!(o.status.success());
    let yearly = csv_rows(&dir.path().join("trend_yearly.csv"));
    let total: f64 = yearly[0][7].parse().unwrap();
    assert!((total + 22.5).abs() < 1e-9, "{total}");
    assert!(yearly[0][5].parse::<f64>().unwrap() < 0.0);

    let single = tempfile::tempdir().unwrap();
    labeled_catalog(single.path(), &[("a", d(2019, 1, 1), 1.0, None), ("b", d(2019, 5, 1), 2.0, None)]);
    let o = indusite(&["trend", "--catalog", p(single.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("degenerate trend"));
}

#[test]
fn config_file_and_flags_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cat = dir.path().join("cat");
    let o = indusite(&["synth", "--out", p(&cat), "--sites", "6", "--years", "2016-2018", "--seed", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"thresholds": [0.25, 0.75], "seed": 99, "ci_level": 0.9}"#,
    )
    .unwrap();
    let out = dir.path().join("split");
    let o = indusite(&["split", "--config", p(&dir.path().join("cfg.json")), "--catalog", p(&cat), "--out", p(&out), "--seed", "7"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let echo: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(echo["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(echo["command"], "split");
    assert_eq!(echo["config"]["seed"], 7);
    assert_eq!(echo["config"]["ci_level"], 0.9);
    assert_eq!(echo["config"]["thresholds"], serde_json::json!([0.25, 0.75]));
    assert_eq!(echo["config"]["side_m"], 800.0);

    fs::write(dir.path().join("bad.json"), r#"{"sede": 1}"#).unwrap();
    let o = indusite(&["split", "--config", p(&dir.path().join("bad.json")), "--catalog", p(&cat)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn label_prints_summary_and_bundle_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let cat = dir.path().join("cat");
    assert!(indusite(&["synth", "--out", p(&cat), "--sites", "8", "--years", "2011,2015,2019"]).status.success());
    let o = indusite(&["label", "--catalog", p(&cat)]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("observations 24") && stdout.contains("nighttime-light labels 16"), "{stdout}");
    assert!(indusite(&["split", "--catalog", p(&cat)]).status.success());
    let bundle = dir.path().join("bundle");
    let o = indusite(&["bundle", "--catalog", p(&cat), "--partition", "train", "--out", p(&bundle), "--resample", "32x24"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = indusite::dataset::verify_bundle(&bundle).unwrap();
    assert_eq!((m.target_h, m.target_w), (32, 24));
    let report = dir.path().join("report");
    assert!(indusite(&["report", "--catalog", p(&cat), "--out", p(&report)]).status.success());
    let rows = csv_rows(&report.join("corpus_report.csv"));
    assert!(rows.iter().any(|r| r[0] == "sites" && r[1] == "8"));
}
