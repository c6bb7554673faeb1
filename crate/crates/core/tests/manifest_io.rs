//! End-to-end manifest loading against real files on disk.

use std::fs;
use std::path::Path;

use firebench_core::annotations::{load_manifest, DatasetManifest};
use firebench_core::Error;

fn write(path: &Path, text: &str) {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).unwrap();
    }
    fs::write(path, text).unwrap();
}

fn manifest_json(images: &[(&str, &str, Option<&str>)]) -> String {
    let images: Vec<String> = images
        .iter()
        .map(|(id, labels, predictions)| match predictions {
            Some(p) => format!(r#"{{"id":"{id}","labels":"{labels}","predictions":"{p}"}}"#),
            None => format!(r#"{{"id":"{id}","labels":"{labels}"}}"#),
        })
        .collect();
    format!(
        r#"{{
  "name": "fixture",
  "classes": [{{"id": 0, "name": "fire"}}, {{"id": 1, "name": "smoke"}}],
  "images": [{}]
}}"#,
        images.join(",")
    )
}

#[test]
fn loads_two_image_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("labels/a.txt"), "0 0.5 0.5 0.2 0.2\n");
    write(&dir.path().join("labels/b.txt"), "");
    write(
        &dir.path().join("preds/a.txt"),
        "0 0.5 0.5 0.2 0.2 0.9\n1 0.3 0.3 0.1 0.1 0.4\n",
    );
    let manifest = dir.path().join("manifest.json");
    write(
        &manifest,
        &manifest_json(&[
            ("a", "labels/a.txt", Some("preds/a.txt")),
            ("b", "labels/b.txt", None),
        ]),
    );

    let dataset = load_manifest(&manifest).unwrap();
    assert_eq!(dataset.name, "fixture");
    assert_eq!(dataset.images.len(), 2);
    assert_eq!(dataset.images[0].ground_truth.len(), 1);
    assert_eq!(dataset.images[0].detections.len(), 2);
    assert!(dataset.images[0].has_predictions);
    // image without a prediction entry: empty detections, flagged
    assert!(dataset.images[1].ground_truth.is_empty());
    assert!(dataset.images[1].detections.is_empty());
    assert!(!dataset.images[1].has_predictions);
}

#[test]
fn duplicate_image_id_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("a.txt"), "");
    let manifest = dir.path().join("manifest.json");
    write(
        &manifest,
        &manifest_json(&[("dup", "a.txt", None), ("dup", "a.txt", None)]),
    );
    let err = load_manifest(&manifest).unwrap_err();
    assert!(err.to_string().contains("dup"), "error: {err}");
}

#[test]
fn missing_label_file_error_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.json");
    write(&manifest, &manifest_json(&[("a", "labels/gone.txt", None)]));
    let err = load_manifest(&manifest).unwrap_err();
    assert!(
        err.to_string().contains("gone.txt"),
        "error should name the missing file: {err}"
    );
}

#[test]
fn label_parse_error_carries_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    write(
        &dir.path().join("a.txt"),
        "0 0.5 0.5 0.2 0.2\n0 0.5 0.5 1.7 0.2\n",
    );
    let manifest = dir.path().join("manifest.json");
    write(&manifest, &manifest_json(&[("a", "a.txt", None)]));
    let err = load_manifest(&manifest).unwrap_err();
    let text = err.to_string();
    assert!(text.contains("a.txt"), "error: {text}");
    assert!(text.contains("line 2"), "error: {text}");
    assert!(matches!(err, Error::InFile { .. }));
}

#[test]
fn loads_a_282_image_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut entries = Vec::new();
    let mut ids = Vec::new();
    for i in 0..282 {
        let rel = format!("labels/img{i:04}.txt");
        let gt = match i % 3 {
            0 => "0 0.5 0.5 0.2 0.2\n1 0.2 0.2 0.1 0.1\n",
            1 => "1 0.4 0.6 0.3 0.2\n",
            _ => "",
        };
        write(&dir.path().join(&rel), gt);
        ids.push((format!("img{i:04}"), rel));
    }
    for (id, rel) in &ids {
        entries.push((id.as_str(), rel.as_str(), None));
    }
    let manifest = dir.path().join("manifest.json");
    write(&manifest, &manifest_json(&entries));

    let dataset = load_manifest(&manifest).unwrap();
    assert_eq!(dataset.images.len(), 282);
    let parsed = DatasetManifest::from_path(&manifest).unwrap();
    assert_eq!(parsed.images.len(), 282);
}

#[test]
fn malformed_json_error_names_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("broken.json");
    write(&manifest, "{ not json");
    let err = load_manifest(&manifest).unwrap_err();
    assert!(matches!(err, Error::Json { .. }));
    assert!(err.to_string().contains("broken.json"));
}
