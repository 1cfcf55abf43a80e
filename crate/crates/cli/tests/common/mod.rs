#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pano_probe_core::corpus::parse_manifest;
use pano_probe_core::probes::DEFAULT_GENERIC_CUES;
use pano_probe_core::scoring::store_write;
use pano_probe_core::synthetic::{
    export_store, placeholder_dataset, scripted_records, write_dataset, DatasetSpec, ImageModel,
    SyntheticModel, TextModel,
};
use pano_probe_core::transforms::{materialize_variants, shift_schedule};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pano-probe"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn pano-probe")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub fn spec(pairs: usize) -> DatasetSpec {
    DatasetSpec {
        pairs,
        width: 64,
        height: 8,
        ..DatasetSpec::default()
    }
}

/// Writes a synthetic dataset, its variants and an embedding store under
/// `dir`. Returns `(manifest, store)`.
pub fn synthetic_fixture(dir: &Path, spec: &DatasetSpec, model: SyntheticModel) -> (PathBuf, PathBuf) {
    let manifest = write_dataset(dir, spec).unwrap();
    let dataset = parse_manifest(&manifest).unwrap();
    let schedule = shift_schedule(dataset.width, 8).unwrap();
    let index = materialize_variants(&dataset, &schedule, &dir.join("variants")).unwrap();
    let cues: Vec<String> = DEFAULT_GENERIC_CUES.iter().map(|c| c.to_string()).collect();
    let store = dir.join("store.jsonl");
    export_store(&dataset, &index, &model, &cues, &store).unwrap();
    (manifest, store)
}

pub const SHIFT_INVARIANT: SyntheticModel = SyntheticModel {
    image: ImageModel::ShiftInvariant,
    text: TextModel::Nudged(0.05),
};

pub const LEFTMOST: SyntheticModel = SyntheticModel {
    image: ImageModel::LeftmostColumn,
    text: TextModel::ContentOnly,
};

/// A placeholder manifest plus a scripted store holding only the given image variants.
pub fn scripted_fixture(dir: &Path, pairs: usize, variants: &[&str]) -> (PathBuf, PathBuf) {
    let dataset = placeholder_dataset(pairs, 64, 8);
    let manifest = dir.join("manifest.json");
    let entries: Vec<_> = dataset
        .pairs
        .iter()
        .map(|p| serde_json::json!({"id": p.id, "image": p.image_path, "prompt": p.prompt}))
        .collect();
    let doc = serde_json::json!({
        "name": dataset.name,
        "width": dataset.width,
        "height": dataset.height,
        "format_cue": dataset.format_cue,
        "pairs": entries,
    });
    fs::write(&manifest, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    let ids: Vec<String> = dataset.pairs.iter().map(|p| p.id.clone()).collect();
    let variants: Vec<String> = variants.iter().map(|v| v.to_string()).collect();
    let store = dir.join("store.jsonl");
    store_write(&scripted_records(&ids, &variants, |i, _| 20.0 + i as f64), &store).unwrap();
    (manifest, store)
}

/// Loss curves whose knee sits at epoch 3 with the given values there.
pub fn write_curve(path: &Path, at_knee: f64, epochs: usize) {
    let mut text = String::from("epoch,loss\n");
    for e in 0..epochs {
        text.push_str(&format!("{e},{}\n", at_knee * 4.0 / (e as f64 + 1.0)));
    }
    fs::write(path, text).unwrap();
}
