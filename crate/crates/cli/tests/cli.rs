//! End-to-end tests of the firebench binary: exit codes, file outputs,
//! and determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn firebench(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_firebench"))
        .args(args)
        .current_dir(cwd)
        .env_remove("FIREBENCH_SEED")
        .output()
        .expect("binary runs")
}

fn write(path: &Path, text: &str) {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).unwrap();
    }
    fs::write(path, text).unwrap();
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

/// Two images, both with ground truth and predictions.
fn small_fixture(dir: &Path) -> PathBuf {
    write(&dir.join("labels/a.txt"), "0 0.3 0.3 0.2 0.2\n1 0.7 0.7 0.2 0.2\n");
    write(&dir.join("labels/b.txt"), "0 0.5 0.5 0.4 0.4\n");
    write(
        &dir.join("preds/a.txt"),
        "0 0.3 0.3 0.2 0.2 0.9\n1 0.7 0.7 0.2 0.2 0.8\n",
    );
    write(&dir.join("preds/b.txt"), "0 0.5 0.5 0.4 0.4 0.95\n");
    let manifest = dir.join("manifest.json");
    write(
        &manifest,
        r#"{
  "name": "small",
  "classes": [{"id": 0, "name": "fire"}, {"id": 1, "name": "smoke"}],
  "images": [
    {"id": "a", "labels": "labels/a.txt", "predictions": "preds/a.txt"},
    {"id": "b", "labels": "labels/b.txt", "predictions": "preds/b.txt"}
  ]
}"#,
    );
    manifest
}

fn uniform_manifest(dir: &Path, n: usize) -> PathBuf {
    let mut entries = Vec::new();
    for i in 0..n {
        let rel = format!("labels/img{i:04}.txt");
        write(&dir.join(&rel), "0 0.5 0.5 0.2 0.2\n");
        entries.push(format!(
            r#"{{"id": "img{i:04}", "labels": "{rel}"}}"#
        ));
    }
    let manifest = dir.join("manifest.json");
    write(
        &manifest,
        &format!(
            r#"{{"name": "uniform", "classes": [{{"id": 0, "name": "fire"}}], "images": [{}]}}"#,
            entries.join(",")
        ),
    );
    manifest
}

#[test]
fn eval_prints_map_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_fixture(dir.path());
    let out = firebench(
        &["eval", manifest.to_str().unwrap(), "--out", "results"],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("mAP@0.5: 100.0%"), "stdout: {text}");

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("results/eval_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["iou_threshold"], 0.5);
    assert_eq!(report["map"], 1.0);
    let table = fs::read_to_string(dir.path().join("results/eval_report.md")).unwrap();
    assert!(table.contains("AP_fire (%)"));
}

#[test]
fn eval_missing_label_file_exits_2_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.json");
    write(
        &manifest,
        r#"{"name": "broken", "classes": [{"id": 0, "name": "fire"}],
            "images": [{"id": "a", "labels": "labels/missing.txt"}]}"#,
    );
    let out = firebench(&["eval", manifest.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing.txt"), "stderr: {}", stderr(&out));
}

#[test]
fn eval_iou_threshold_is_plumbed_through() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_fixture(dir.path());
    let out = firebench(
        &[
            "eval",
            manifest.to_str().unwrap(),
            "--iou-thresh",
            "0.75",
            "--format",
            "json",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["iou_threshold"], 0.75);
}

#[test]
fn eval_predictions_dir_overrides_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_fixture(dir.path());
    // Alternate predictions: nothing detected on either image.
    write(&dir.path().join("alt/a.txt"), "");
    write(&dir.path().join("alt/b.txt"), "");
    let out = firebench(
        &[
            "eval",
            manifest.to_str().unwrap(),
            "--predictions",
            "alt",
            "--format",
            "json",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["map"], 0.0);
}

#[test]
fn split_reports_protocol_sizes_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = uniform_manifest(dir.path(), 282);
    let run = |out_dir: &str| {
        firebench(
            &[
                "split",
                manifest.to_str().unwrap(),
                "--seed",
                "7",
                "--out",
                out_dir,
            ],
            dir.path(),
        )
    };
    let first = run("s1");
    assert!(first.status.success(), "stderr: {}", stderr(&first));
    let text = stdout(&first);
    assert!(text.contains("train: 198"), "stdout: {text}");
    assert!(text.contains("val: 42"), "stdout: {text}");
    assert!(text.contains("test: 42"), "stdout: {text}");

    let second = run("s2");
    assert!(second.status.success());
    for name in ["split.json", "train.txt", "val.txt", "test.txt"] {
        let a = fs::read(dir.path().join("s1").join(name)).unwrap();
        let b = fs::read(dir.path().join("s2").join(name)).unwrap();
        assert_eq!(a, b, "{name} not byte-identical across reruns");
    }

    let split: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("s1/split.json")).unwrap())
            .unwrap();
    assert_eq!(split["seed"], 7);
    assert_eq!(split["ratios"][0], 0.7);
}

#[test]
fn split_rejects_bad_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = uniform_manifest(dir.path(), 10);
    let out = firebench(
        &["split", manifest.to_str().unwrap(), "--ratios", "0.9,0.2,0.2"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn kfold_writes_balanced_folds_and_rejects_k_1() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = uniform_manifest(dir.path(), 10);
    let out = firebench(
        &["kfold", manifest.to_str().unwrap(), "--out", "folds"],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    for fold in 0..5 {
        let ids = fs::read_to_string(dir.path().join(format!("folds/fold_{fold}.txt"))).unwrap();
        assert_eq!(ids.lines().count(), 2, "fold {fold}");
    }

    let bad = firebench(&["kfold", manifest.to_str().unwrap(), "--k", "1"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn seed_env_var_is_a_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = uniform_manifest(dir.path(), 20);
    let with_flag = firebench(
        &["split", manifest.to_str().unwrap(), "--seed", "99", "--out", "a"],
        dir.path(),
    );
    assert!(with_flag.status.success());
    let with_env = Command::new(env!("CARGO_BIN_EXE_firebench"))
        .args(["split", manifest.to_str().unwrap(), "--out", "b"])
        .current_dir(dir.path())
        .env("FIREBENCH_SEED", "99")
        .output()
        .unwrap();
    assert!(with_env.status.success());
    let a = fs::read(dir.path().join("a/split.json")).unwrap();
    let b = fs::read(dir.path().join("b/split.json")).unwrap();
    assert_eq!(a, b);
}

fn bench_fixture(dir: &Path, n_images: u64, runtime_s: f64) -> (PathBuf, PathBuf) {
    let timing = dir.join("timing.json");
    write(
        &timing,
        &format!(r#"{{"run_id": "v5n", "n_images": {n_images}, "runtime_s": {runtime_s}}}"#),
    );
    let power = dir.join("power.csv");
    let mut csv = String::from("time,power_mw\n");
    let samples = (runtime_s * 100.0) as usize;
    for i in 0..=samples {
        csv.push_str(&format!("{},6783.22\n", i as f64 * 0.01));
    }
    write(&power, &csv);
    (timing, power)
}

#[test]
fn bench_computes_metrics_and_warns_below_real_time() {
    let dir = tempfile::tempdir().unwrap();
    let (timing, power) = bench_fixture(dir.path(), 42, 7.1186);
    let out = firebench(
        &[
            "bench",
            "--timing",
            timing.to_str().unwrap(),
            "--power",
            power.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("5.90 fps"), "stdout: {}", stdout(&out));
    assert!(
        stderr(&out).contains("below the 25 fps real-time bar"),
        "stderr: {}",
        stderr(&out)
    );

    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run_metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics["run_id"], "v5n");
    assert_eq!(metrics["n_images"], 42);
    let fps = metrics["fps"].as_f64().unwrap();
    assert!((fps - 5.9).abs() < 0.005, "fps {fps}");
    let avg = metrics["avg_power_mw"].as_f64().unwrap();
    assert!((avg - 6783.22).abs() < 1e-9);
}

#[test]
fn bench_above_real_time_has_no_warning() {
    let dir = tempfile::tempdir().unwrap();
    let (timing, power) = bench_fixture(dir.path(), 300, 10.0);
    let out = firebench(
        &[
            "bench",
            "--timing",
            timing.to_str().unwrap(),
            "--power",
            power.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(!stderr(&out).contains("real-time"), "stderr: {}", stderr(&out));
}

#[test]
fn bench_rejects_empty_power_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (timing, _) = bench_fixture(dir.path(), 42, 7.0);
    let power = dir.path().join("empty.csv");
    write(&power, "time,power_mw\n");
    let out = firebench(
        &[
            "bench",
            "--timing",
            timing.to_str().unwrap(),
            "--power",
            power.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

fn run_metrics_json(run_id: &str, n_images: u64, runtime_s: f64, energy_j: f64) -> String {
    let fps = n_images as f64 / runtime_s;
    format!(
        r#"{{"run_id": "{run_id}", "n_images": {n_images}, "runtime_s": {runtime_s},
            "avg_power_mw": 5000.0, "energy_j": {energy_j}, "fps": {fps}}}"#
    )
}

#[test]
fn edp_group_reproduces_hand_oracle() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("records/a.json"), &run_metrics_json("a", 100, 5.0, 10.0));
    write(&dir.path().join("records/b.json"), &run_metrics_json("b", 100, 10.0, 8.0));
    let out = firebench(&["edp", "records"], dir.path());
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("edp_group.csv")).unwrap();
    assert!(csv.contains("a,1,0.5,0.5"), "csv: {csv}");
    assert!(csv.contains("b,0.8,1,0.8"), "csv: {csv}");
}

#[test]
fn edp_runs_filter_selects_the_declared_group() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("records/a.json"), &run_metrics_json("a", 100, 5.0, 10.0));
    write(&dir.path().join("records/b.json"), &run_metrics_json("b", 100, 10.0, 8.0));
    write(&dir.path().join("records/c.json"), &run_metrics_json("c", 100, 20.0, 40.0));
    let out = firebench(&["edp", "records", "--runs", "a,b"], dir.path());
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("edp_group.csv")).unwrap();
    assert!(!csv.contains("c,"), "csv: {csv}");
    assert!(csv.contains("a,1,0.5,0.5"), "csv: {csv}");

    let missing = firebench(&["edp", "records", "--runs", "a,zzz"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
}

fn record_json(run_id: &str, model: &str, fps_images: (u64, f64), power: f64, aps: (f64, f64)) -> String {
    let (n, runtime) = fps_images;
    let fps = n as f64 / runtime;
    let energy = power * runtime / 1000.0;
    let (fire, smoke) = aps;
    let map = (fire + smoke) / 2.0;
    format!(
        r#"{{
  "run_id": "{run_id}",
  "model": "{model}",
  "stages": [{{"index": 1, "source_weights": "scratch", "dataset": "AFSE",
               "frozen_layers": 0, "epochs": 300, "initial_lr": 0.01,
               "training_time_hours": 0.072}}],
  "validation": {{
    "iou_threshold": 0.5,
    "per_class": [
      {{"class": {{"id": 0, "name": "fire"}}, "ap": {fire},
        "curve": {{"class": {{"id": 0, "name": "fire"}},
                   "points": [{{"recall": 0.0, "precision": 1.0, "confidence": null}}]}},
        "method": "envelope"}},
      {{"class": {{"id": 1, "name": "smoke"}}, "ap": {smoke},
        "curve": {{"class": {{"id": 1, "name": "smoke"}},
                   "points": [{{"recall": 0.0, "precision": 1.0, "confidence": null}}]}},
        "method": "envelope"}}
    ],
    "map": {map}
  }},
  "run_metrics": {{"run_id": "{run_id}", "n_images": {n}, "runtime_s": {runtime},
                   "avg_power_mw": {power}, "energy_j": {energy}, "fps": {fps}}}
}}"#
    )
}

#[test]
fn report_renders_three_model_efficiency_table() {
    let dir = tempfile::tempdir().unwrap();
    write(
        &dir.path().join("records/v5n.json"),
        &record_json("v5n", "YOLOv5n", (42, 7.1186), 6783.22, (0.358, 0.828)),
    );
    write(
        &dir.path().join("records/v8n.json"),
        &record_json("v8n", "YOLOv8n", (33, 10.0), 6522.63, (0.364, 0.813)),
    );
    write(
        &dir.path().join("records/y11n.json"),
        &record_json("y11n", "YOLO11n", (33, 10.0), 6580.66, (0.367, 0.795)),
    );
    let out = firebench(&["report", "records", "--layout", "efficiency"], dir.path());
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let table = fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert_eq!(table.lines().count(), 5, "table:\n{table}");
    assert!(table.contains("| YOLOv5n | 5.9 | 6783.22 | 35.8 | 82.8 | 59.3 |"), "table:\n{table}");
}

#[test]
fn report_on_empty_dir_is_header_only_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("records")).unwrap();
    let out = firebench(
        &["report", "records", "--layout", "accuracy", "--format", "csv"],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let table = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(table.lines().count(), 1, "table: {table}");
}

#[test]
fn report_missing_field_exits_2_naming_the_record() {
    let dir = tempfile::tempdir().unwrap();
    // No run_metrics: efficiency layout must refuse.
    let mut record = record_json("v5n", "YOLOv5n", (42, 7.1186), 6783.22, (0.358, 0.828));
    record = record.replace("\"run_metrics\"", "\"ignored\"");
    write(&dir.path().join("records/v5n.json"), &record);
    let out = firebench(&["report", "records", "--layout", "efficiency"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("v5n"), "stderr: {}", stderr(&out));
}
