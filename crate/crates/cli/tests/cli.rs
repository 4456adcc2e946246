//! Behaviour of the `beaconlabel` binary: outputs, exit codes, messages.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use beaconlabel_core::calib::CalibrationReport;
use beaconlabel_core::io::read_json;
use beaconlabel_core::EvalReport;
use serde::Deserialize;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_beaconlabel"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/noisy_calib")
}

/// Simulated dataset, calibration report and generated labels.
struct Run {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Run {
    fn new(samples: usize, noise_free: bool) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let n = samples.to_string();
        let ds = root.join("ds");
        let mut args = vec!["--seed", "7", "simulate", "--out", s(&ds), "--samples", &n];
        if noise_free {
            args.push("--noise-free");
        }
        ok(&args);
        ok(&["--seed", "7", "calibrate", "--dataset", s(&root.join("ds")), "--out", s(&root.join("calib.json"))]);
        ok(&[
            "generate",
            "--dataset",
            s(&root.join("ds")),
            "--calibration",
            s(&root.join("calib.json")),
            "--out",
            s(&root.join("labels")),
        ]);
        Self { _dir: dir, root }
    }

    fn p(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn evaluate(&self, labels: &str) -> EvalReport {
        let out = self.p(&format!("eval_{labels}.json"));
        ok(&["evaluate", "--auto", s(&self.p(labels)), "--dataset", s(&self.p("ds")), "--out", s(&out)]);
        read_json(&out).unwrap()
    }
}

#[test]
fn simulate_creates_nested_output_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("x/y/a"), dir.path().join("b"));
    let stdout = ok(&["--seed", "3", "simulate", "--out", s(&a), "--samples", "2"]);
    assert!(stdout.contains("wrote 2 samples"));
    ok(&["--seed", "3", "--jobs", "2", "simulate", "--out", s(&b), "--samples", "2"]);
    for rel in ["manifest.json", "samples/0001/cloud.ply", "truth/0000.json", "calibration/correspondences.csv"] {
        assert_eq!(fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn malformed_config_is_a_config_error_with_a_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\n[refine]\niterations = \"many\"\n").unwrap();
    let out = run(&["--config", s(&cfg), "simulate", "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");

    fs::write(&cfg, "[simulate]\nsampels = 2\n").unwrap();
    let out = run(&["--config", s(&cfg), "simulate", "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sampels"));
}

#[test]
fn config_file_values_apply_and_flags_override_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "seed = 5\n[simulate]\nsamples = 1\n").unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["--config", s(&cfg), "simulate", "--out", s(&a)]);
    ok(&["--seed", "5", "simulate", "--out", s(&b), "--samples", "1"]);
    ok(&["--config", s(&cfg), "--seed", "6", "simulate", "--out", s(&c), "--samples", "2"]);
    let list = |p: &Path| fs::read_dir(p.join("samples")).unwrap().count();
    assert_eq!(list(&a), 1);
    assert_eq!(list(&c), 2);
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    assert_ne!(
        fs::read(a.join("samples/0000/cloud.ply")).unwrap(),
        fs::read(c.join("samples/0000/cloud.ply")).unwrap()
    );
}

#[test]
fn noise_free_calibration_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    ok(&["simulate", "--out", s(&ds), "--samples", "0", "--noise-free"]);
    let report = dir.path().join("c.json");
    let stdout = ok(&["calibrate", "--dataset", s(&ds), "--out", s(&report)]);
    assert!(stdout.contains("inliers: 63/63"), "{stdout}");
    let r: CalibrationReport = read_json(&report).unwrap();
    assert!(r.rmse_px < 1e-6, "{}", r.rmse_px);
}

#[derive(Deserialize)]
struct Expected {
    inliers: usize,
    rmse_px: f64,
}

#[test]
fn frozen_fixture_calibration() {
    let expected: BTreeMap<String, Expected> =
        read_json(&fixture().with_extension("expected.json")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut rmse = BTreeMap::new();
    for delta in ["8", "25"] {
        for planar in ["--planar", "--no-planar"] {
            let out = dir.path().join(format!("{planar}{delta}.json"));
            let stdout = ok(&[
                "--seed",
                "7",
                "calibrate",
                "--dataset",
                s(&fixture()),
                "--out",
                s(&out),
                "--delta-px",
                delta,
                planar,
            ]);
            let r: CalibrationReport = read_json(&out).unwrap();
            let key = format!("{}_delta_{delta}", planar.trim_start_matches("--").replace('-', "_"));
            let e = &expected[&key];
            assert_eq!(r.inliers.len(), e.inliers, "{key}");
            assert!((r.rmse_px - e.rmse_px).abs() < 1e-9, "{key}: {} vs {}", r.rmse_px, e.rmse_px);
            assert!(stdout.contains(&format!("inliers: {}/63", e.inliers)));
            rmse.insert(key, r.rmse_px);
        }
    }
    assert!(rmse["planar_delta_8"] <= rmse["no_planar_delta_8"]);
    assert!(rmse["planar_delta_25"] <= rmse["no_planar_delta_25"]);
}

#[test]
fn too_few_correspondences_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = fs::read_to_string(fixture().join("calibration/correspondences.csv")).unwrap();
    let short: Vec<&str> = csv.lines().take(6).collect();
    let path = dir.path().join("five.csv");
    fs::write(&path, short.join("\n") + "\n").unwrap();
    let out = run(&[
        "calibrate",
        "--dataset",
        s(&fixture()),
        "--correspondences",
        s(&path),
        "--out",
        s(&dir.path().join("c.json")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("c.json").exists());
}

#[test]
fn missing_inputs_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["calibrate", "--dataset", s(&dir.path().join("nope")), "--out", s(&dir.path().join("c.json"))]);
    assert_eq!(out.status.code(), Some(3));
    let out = run(&["--jobs", "0", "simulate", "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn noise_free_labels_match_truth_and_regenerate_identically() {
    let r = Run::new(3, true);
    let report = r.evaluate("labels");
    assert_eq!(report.matched, 6);
    for p in report.samples.iter().flat_map(|s| &s.pairs) {
        assert!(p.iou_3d.unwrap() >= 0.999, "{p:?}");
        assert!(p.iou_2d.unwrap() >= 0.999, "{p:?}");
    }
    let again = r.p("labels2");
    ok(&[
        "--jobs",
        "3",
        "generate",
        "--dataset",
        s(&r.p("ds")),
        "--calibration",
        s(&r.p("calib.json")),
        "--out",
        s(&again),
    ]);
    for id in ["0000", "0001", "0002"] {
        let f = format!("{id}.json");
        assert_eq!(fs::read(r.p("labels").join(&f)).unwrap(), fs::read(again.join(&f)).unwrap());
    }
}

#[test]
fn refinement_does_not_lower_mean_iou_and_self_comparison_is_perfect() {
    let r = Run::new(4, false);
    ok(&["--seed", "1", "refine", "--dataset", s(&r.p("ds")), "--labels", s(&r.p("labels")), "--out", s(&r.p("refined"))]);
    let before = r.evaluate("labels").mean_iou_3d.unwrap();
    let after = r.evaluate("refined").mean_iou_3d.unwrap();
    assert!(after >= before, "{after} < {before}");

    let refined: beaconlabel_core::LabelFile = read_json(&r.p("refined/0000.json")).unwrap();
    assert!(refined.objects.iter().all(|o| o.refined));

    let out = r.p("self.json");
    let stdout = ok(&["evaluate", "--auto", s(&r.p("refined")), "--reference", s(&r.p("refined")), "--out", s(&out)]);
    assert!(stdout.contains("mean_iou_3d: 1.0000"), "{stdout}");
    let rep: EvalReport = read_json(&out).unwrap();
    assert!((rep.mean_iou_2d.unwrap() - 1.0).abs() < 1e-12);
    assert!((rep.mean_iou_3d.unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn unknown_class_lists_the_available_kinds() {
    let r = Run::new(1, true);
    let path = r.p("labels/0000.json");
    let text = fs::read_to_string(&path).unwrap().replace("\"table\"", "\"sofa\"");
    fs::write(&path, text).unwrap();
    let out = run(&["refine", "--dataset", s(&r.p("ds")), "--labels", s(&r.p("labels")), "--out", s(&r.p("refined"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sofa") && err.contains("table_stem") && err.contains("cabinet_left_front"), "{err}");
    assert!(!r.p("refined").exists());
}

#[test]
fn downsample_study_rows_and_summary() {
    let r = Run::new(1, false);
    let out = r.p("study");
    let stdout = ok(&[
        "--seed",
        "2",
        "evaluate",
        "--study",
        "downsample",
        "--dataset",
        s(&r.p("ds")),
        "--labels",
        s(&r.p("labels")),
        "--sample",
        "0000",
        "--object",
        "obj0",
        "--proportions",
        "0.1,0.5,1.0",
        "--trials",
        "4",
        "--out",
        s(&out),
    ]);
    assert_eq!(stdout.lines().count(), 3);
    let csv = fs::read_to_string(out.join("study.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 4);
    assert!(csv.starts_with("proportion,trial,fitness,iou,error"));
    assert!(out.join("summary.json").exists());
}

#[test]
fn evaluate_pairs_csv_and_rmse_summary() {
    let r = Run::new(2, false);
    let out = r.p("e.json");
    let csv = r.p("pairs.csv");
    ok(&[
        "evaluate",
        "--auto",
        s(&r.p("labels")),
        "--dataset",
        s(&r.p("ds")),
        "--out",
        s(&out),
        "--pairs-csv",
        s(&csv),
        "--calibrations",
        s(&r.p("calib.json")),
    ]);
    let rep: EvalReport = read_json(&out).unwrap();
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 1 + rep.matched);
    let c: CalibrationReport = read_json(&r.p("calib.json")).unwrap();
    let rmse = rep.rmse.unwrap();
    assert_eq!(rmse.count, 1);
    assert_eq!(rmse.mean, c.rmse_px);
    // The mean IoU is the plain average over matched pairs.
    let ious: Vec<f64> = rep.samples.iter().flat_map(|s| &s.pairs).filter_map(|p| p.iou_3d).collect();
    let mean = ious.iter().sum::<f64>() / ious.len() as f64;
    assert!((rep.mean_iou_3d.unwrap() - mean).abs() < 1e-12);
}
