mod common;

use std::fs;

use common::*;
use pano_probe_core::probes::{Outcome, ProbeReport, Verdict};
use pano_probe_core::transforms::VariantIndex;

#[test]
fn variants_writes_sixteen_paths_and_is_rerunnable() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = pano_probe_core::synthetic::write_dataset(dir.path(), &spec(2)).unwrap();
    let out = dir.path().join("v");
    let args = ["variants", "--manifest", s(&manifest), "--out", s(&out)];
    let first = run(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    let index = VariantIndex::read(&out.join("variants.json")).unwrap();
    assert_eq!(index.generated_count(), 16);
    let bytes = fs::read(out.join("variants.json")).unwrap();
    assert!(run(&args).status.success());
    assert_eq!(fs::read(out.join("variants.json")).unwrap(), bytes);
}

#[test]
fn variants_missing_image_names_pair() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = pano_probe_core::synthetic::write_dataset(dir.path(), &spec(3)).unwrap();
    fs::remove_file(dir.path().join("images/pano_0002.png")).unwrap();
    let out = run(&["variants", "--manifest", s(&manifest), "--out", s(&dir.path().join("v"))]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("pano_0002"), "{}", stderr(&out));
}

#[test]
fn visual_probe_comprehends_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, store) = synthetic_fixture(dir.path(), &spec(20), SHIFT_INVARIANT);
    let out_dir = dir.path().join("out");
    let out = run(&["probe-visual", "--manifest", s(&manifest), "--store", s(&store), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("verdict: comprehends"), "{}", stdout(&out));
    let report = ProbeReport::from_json(&fs::read_to_string(out_dir.join("visual.json")).unwrap()).unwrap();
    assert_eq!(report.verdict, Verdict::Comprehends);
    assert!(out_dir.join("visual.csv").exists());
    assert!(out_dir.join("visual.md").exists());
}

#[test]
fn failing_probe_still_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, store) = synthetic_fixture(dir.path(), &spec(20), LEFTMOST);
    let out_dir = dir.path().join("out");
    let out = run(&["probe-visual", "--manifest", s(&manifest), "--store", s(&store), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("does_not_comprehend"));
}

#[test]
fn missing_flip_is_a_pipeline_error() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, store) = scripted_fixture(dir.path(), 5, &["orig"]);
    let out = run(&[
        "probe-visual", "--manifest", s(&manifest), "--store", s(&store), "--out", s(&dir.path().join("out")),
    ]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("pano_0000") && err.contains("flip"), "{err}");
}

#[test]
fn alpha_override_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, store) = synthetic_fixture(dir.path(), &spec(12), SHIFT_INVARIANT);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "probe-textual", "--manifest", s(&manifest), "--store", s(&store), "--out", s(&out_dir),
        "--alpha", "0.05", "--format", "csv",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("alpha=0.05"), "{}", stdout(&out));
    let report = ProbeReport::from_json(&fs::read_to_string(out_dir.join("textual.json")).unwrap()).unwrap();
    assert_eq!(report.alpha, 0.05);
    assert!(report.per_condition.iter().all(|c| c.outcome == Outcome::Reject));
}

#[test]
fn cue_flag_replaces_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, store) = synthetic_fixture(dir.path(), &spec(12), SHIFT_INVARIANT);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "probe-textual", "--manifest", s(&manifest), "--store", s(&store), "--out", s(&out_dir),
        "--cue", "photo, ", "--cue", "",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = ProbeReport::from_json(&fs::read_to_string(out_dir.join("textual.json")).unwrap()).unwrap();
    assert_eq!(report.per_condition.len(), 2);
}

#[test]
fn bound_override_bypasses_zero_bound() {
    let dir = tempfile::tempdir().unwrap();
    let variants = ["orig", "flip", "shift:8", "shift:16", "shift:24", "shift:32", "shift:40", "shift:48", "shift:56"];
    let (manifest, store) = scripted_fixture(dir.path(), 6, &variants);
    let base = ["probe-visual", "--manifest", s(&manifest), "--store", s(&store), "--out"];
    let out_dir = dir.path().join("out");
    let out = run(&[&base[..], &[s(&out_dir)]].concat());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--bound") || stderr(&out).contains("bound"), "{}", stderr(&out));
    let out = run(&[&base[..], &[s(&out_dir), "--bound", "1.0"]].concat());
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn lambda_from_engineered_curves() {
    let dir = tempfile::tempdir().unwrap();
    let (c1, c0) = (dir.path().join("l1.csv"), dir.path().join("l0.csv"));
    write_curve(&c1, 0.0212, 20);
    write_curve(&c0, 1.8854, 20);
    let out = run(&["lambda", "--curve1", s(&c1), "--curve0", s(&c0)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["knee_epoch"], 3);
    assert!((v["lambda"].as_f64().unwrap() - 0.9889).abs() < 5e-5);

    let out = run(&["lambda", "--curve1", s(&c1), "--curve0", s(&c1)]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["lambda"].as_f64().unwrap(), 0.5);
}

#[test]
fn lambda_flat_curve_fails() {
    let dir = tempfile::tempdir().unwrap();
    let flat = dir.path().join("flat.csv");
    fs::write(&flat, (0..10).fold("epoch,loss\n".to_string(), |acc, e| acc + &format!("{e},0.5\n"))).unwrap();
    let out = run(&["lambda", "--curve1", s(&flat), "--curve0", s(&flat)]);
    assert!(!out.status.success());
    assert!(stderr(&out).to_lowercase().contains("knee"), "{}", stderr(&out));
}

#[test]
fn boxplot_from_values_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let values = dir.path().join("v.txt");
    fs::write(&values, "1\n2\n3\n4\n").unwrap();
    let out = run(&["boxplot", "--values", s(&values), "--label", "x"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v[0]["upper_fence"].as_f64().unwrap(), 5.5);

    let (manifest, store) = synthetic_fixture(dir.path(), &spec(10), SHIFT_INVARIANT);
    let out_dir = dir.path().join("out");
    run(&["probe-visual", "--manifest", s(&manifest), "--store", s(&store), "--out", s(&out_dir)]);
    let out = run(&["boxplot", "--report", s(&out_dir.join("visual.json"))]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 9);
}

#[test]
fn compare_reports_flags_flips() {
    let dir = tempfile::tempdir().unwrap();
    let (m1, s1) = synthetic_fixture(&dir.path().join("a"), &spec(15), LEFTMOST);
    let (_, s2) = synthetic_fixture(&dir.path().join("b"), &spec(15), SHIFT_INVARIANT);
    let (o1, o2) = (dir.path().join("o1"), dir.path().join("o2"));
    run(&["probe-visual", "--manifest", s(&m1), "--store", s(&s1), "--out", s(&o1)]);
    run(&["probe-visual", "--manifest", s(&m1), "--store", s(&s2), "--out", s(&o2)]);
    let out = run(&["compare", "--before", s(&o1.join("visual.json")), "--after", s(&o2.join("visual.json"))]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!v["flips"].as_array().unwrap().is_empty());
}

#[test]
fn unknown_flag_is_rejected() {
    let out = run(&["lambda", "--curve1", "a", "--curve0", "b", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_lists_flags() {
    let out = run(&["probe-visual", "--help"]);
    let text = stdout(&out);
    for flag in ["--manifest", "--store", "--service-url", "--out", "--alpha", "--divisions", "--cue", "--bound", "--format"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
}
