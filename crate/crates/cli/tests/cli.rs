use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nsmimo::detect::parse_detections;
use nsmimo::harness::{read_results_csv, CellSummary, Scheme};
use nsmimo::image::BoxLabel;
use nsmimo::model::{sample_scenario, SystemConfig};

fn nsmimo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsmimo"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = nsmimo(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_scenario(dir: &Path, m: usize, s: usize, paths: usize, seed: u64) -> String {
    let sc = sample_scenario(&SystemConfig::new(m, m, s), paths..=paths, seed).unwrap();
    let p = dir.join("scenario.json");
    fs::write(&p, sc.to_json().unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn dataset_layout_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ds.json");
    fs::write(&cfg, r#"{"system":{"M":32,"N":32,"S":1,"d_over_lambda":0.5,"delta_f":15000,"f_ul":2.58e9,"f_dl":2.64e9},"paths_max":3}"#).unwrap();
    let out = dir.path().join("ds");
    ok(&["generate-dataset", "--config", cfg.to_str().unwrap(), "--count", "4", "--seed", "9", "--out", out.to_str().unwrap()]);
    for i in 0..4 {
        let id = format!("{i:05}");
        assert!(out.join("images").join(format!("{id}.png")).is_file());
        let text = fs::read_to_string(out.join("labels").join(format!("{id}.txt"))).unwrap();
        assert!(!text.is_empty());
        for line in text.lines() {
            let l = BoxLabel::parse_line(line).unwrap();
            // stationary array: every box has the full-array height
            assert!((l.y_max - l.y_min - (938.0 * 2.0 / 32.0_f64).round() as i64).abs() <= 1, "{line}");
        }
    }
}

#[test]
fn detect_from_scenario_and_png_agree() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), 32, 2, 2, 4);
    let out = ok(&["detect", "--scenario", &sc, "--snr", "10"]);
    let from_pilots = parse_detections(out.stdout.as_slice()).unwrap();
    assert!(!from_pilots.is_empty());

    let ds = dir.path().join("ds");
    ok(&["generate-dataset", "--count", "1", "--snr", "10", "--out", ds.to_str().unwrap()]);
    let png = ds.join("images/00000.png");
    let file = dir.path().join("dets.jsonl");
    ok(&["detect", "--image", png.to_str().unwrap(), "--m", "128", "--n", "128", "--s", "4", "--out", file.to_str().unwrap()]);
    let dets = parse_detections(fs::read(&file).unwrap().as_slice()).unwrap();
    let labels = fs::read_to_string(ds.join("labels/00000.txt")).unwrap();
    let truth: Vec<BoxLabel> = labels.lines().map(|l| BoxLabel::parse_line(l).unwrap()).collect();
    // every label centre lies inside some detected box
    for t in &truth {
        let (cx, cy) = ((t.x_min + t.x_max) / 2, (t.y_min + t.y_max) / 2);
        assert!(
            dets.iter().any(|d| d.x_min <= cx + 2 && cx <= d.x_max + 2 && d.y_min <= cy + 2 && cy <= d.y_max + 2),
            "label {t:?} not covered by {dets:?}"
        );
    }
}

#[test]
fn detect_rejects_bad_inputs() {
    assert!(!nsmimo(&["detect"]).status.success());
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{").unwrap();
    assert!(!nsmimo(&["detect", "--scenario", bad.to_str().unwrap()]).status.success());
    assert!(!nsmimo(&["run", "--scheme", "bogus"]).status.success());
    assert!(!nsmimo(&["run", "--identifier", "x"]).status.success());
}

#[test]
fn run_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    fs::write(&cfg, r#"{"system":{"M":16,"N":16,"S":2,"d_over_lambda":0.5,"delta_f":15000,"f_ul":2.58e9,"f_dl":2.64e9},"paths_max":2,"bootstrap_resamples":100}"#).unwrap();
    let out = dir.path().join("res");
    let args = [
        "run", "--config", cfg.to_str().unwrap(), "--trials", "3", "--snr", "5", "--snr", "10",
        "--scheme", "proposed", "--scheme", "ls", "--identifier", "box", "--seed", "7",
        "--diagnostics", "--out", out.to_str().unwrap(),
    ];
    ok(&args);
    let records = read_results_csv(&out.join("results.csv")).unwrap();
    assert_eq!(records.len(), 2 * 2 * 3);
    assert!(records.iter().any(|r| r.scheme == Scheme::Ls));
    assert!(out.join("summary.json").is_file());
    assert_eq!(fs::read_dir(out.join("diagnostics")).unwrap().count(), 12);
    let first = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(first.starts_with(
        "scheme,snr_db,trial,nmse_ul_db,nmse_dl_db,se_bps_hz,l_hat,dl_symbols,feedback_count,failed"
    ));

    // same config and seed, same CSV
    ok(&args);
    assert_eq!(fs::read_to_string(out.join("results.csv")).unwrap(), first);

    let eval = ok(&["eval", out.to_str().unwrap(), "--resamples", "100"]);
    let cells: Vec<CellSummary> = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(cells.len(), 4);
    assert!(cells.iter().all(|c| c.trials == 3));
}

#[test]
fn run_with_imported_detections() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), 32, 2, 1, 11);
    let dets = dir.path().join("dets.jsonl");
    let out = ok(&["detect", "--scenario", &sc, "--snr", "10"]);
    fs::write(&dets, &out.stdout).unwrap();
    let res = dir.path().join("res");
    ok(&[
        "run", "--scenario", &sc, "--detections", dets.to_str().unwrap(), "--trials", "1",
        "--snr", "10", "--scheme", "proposed", "--out", res.to_str().unwrap(),
    ]);
    let records = read_results_csv(&res.join("results.csv")).unwrap();
    assert_eq!(records.len(), 1);
    assert!(!records[0].failed);
    assert!(records[0].nmse_ul_db.unwrap() < -20.0);
}
