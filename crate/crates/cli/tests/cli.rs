//! The `ctview` binary driven as a subprocess.

use std::path::Path;
use std::process::{Command, Output};

use ctview_core::render::{decode_png, encode_png, render_scene, Scene};
use ctview_core::synth::{generate_case, SynthConfig};
use serde_json::{json, Value};

fn ctview(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctview")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["ingest", "segment", "classify", "render", "mip", "measure", "synth", "train", "eval", "serve"] {
        let out = ctview(&[sub, "--help"]);
        assert!(out.status.success(), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"), "{sub}");
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(ctview(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(ctview(&["mip"]).status.code(), Some(2));
}

#[test]
fn missing_case_fails_at_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let out = ctview(&["classify", "--case", p(&dir.path().join("missing.json")), "--model", "m.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ingest"), "{err}");
}

#[test]
fn hidden_scene_renders_the_background() {
    let dir = tempfile::tempdir().unwrap();
    let hidden = |name: &str| json!({ "visible": false, "tf": ctview_core::render::builtin_tf(name) });
    let scene = json!({
        "settings": {
            "labels": [hidden("context-fat"), hidden("lung-air"), hidden("lesion-red")],
            "width": 20, "height": 16, "background": [9, 8, 7, 255]
        }
    });
    let scene_path = dir.path().join("scene.json");
    std::fs::write(&scene_path, scene.to_string()).unwrap();
    let png = dir.path().join("out.png");
    let out = ctview(&["render", "--scene", p(&scene_path), "--out", p(&png)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (w, h, px) = decode_png(&std::fs::read(&png).unwrap()).unwrap();
    assert_eq!((w, h), (20, 16));
    assert!(px.chunks(4).all(|c| c == [9, 8, 7, 255]));
}

#[test]
fn phantom_render_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let scene_path = dir.path().join("scene.json");
    std::fs::write(&scene_path, r#"{"settings": {"width": 24, "height": 20}}"#).unwrap();
    let png = dir.path().join("out.png");
    let out = ctview(&["render", "--scene", p(&scene_path), "--seed", "6", "--out", p(&png)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let case = generate_case(&SynthConfig::default(), "phantom", 6, true);
    let scene: Scene = serde_json::from_str(r#"{"settings": {"width": 24, "height": 20}}"#).unwrap();
    let expect = encode_png(&render_scene(&case.scalar, Some(&case.composite_labels()), &scene).unwrap()).unwrap();
    assert_eq!(std::fs::read(&png).unwrap(), expect);
}

#[test]
fn dataset_round_trip_through_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let synth = stdout_json(&ctview(&["synth", "--cases", "6", "--seed", "2", "--out", p(&data)]));
    assert_eq!(synth["cases"], 6);
    assert_eq!(synth["positives"], 3);
    let index: Value = serde_json::from_slice(&std::fs::read(data.join("index.json")).unwrap()).unwrap();
    let first = data.join(index[0]["manifest"].as_str().unwrap());
    let case = p(&first);

    let ingest = stdout_json(&ctview(&["ingest", "--input", case]));
    assert_eq!(ingest["dims"], json!([64, 64, 10]));

    let seg = stdout_json(&ctview(&["segment", "--case", case, "--out-dir", p(&dir.path().join("seg"))]));
    assert!(seg["lung_voxels"].as_u64().unwrap() > 0);
    assert!(seg["notice"].is_string());

    let mip = dir.path().join("mip.png");
    assert!(ctview(&["mip", "--case", case, "--outlines", "--slab", "2", "--out", p(&mip)]).status.success());
    assert_eq!(decode_png(&std::fs::read(&mip).unwrap()).unwrap().0, 64);

    let records = dir.path().join("m.json");
    let m = stdout_json(&ctview(&["measure", "--case", case, "--p1", "0,0,0", "--p2", "3,4,0", "--out", p(&records)]));
    assert_eq!(m["records"][2]["value"], 25.0);
    let saved: Value = serde_json::from_slice(&std::fs::read(&records).unwrap()).unwrap();
    assert_eq!(saved, m["records"]);

    let model = dir.path().join("model.json");
    let trained = stdout_json(&ctview(&["train", "--data", p(&data), "--out", p(&model), "--epochs", "1"]));
    assert_eq!(trained["history"].as_array().unwrap().len(), 1);
    let c = stdout_json(&ctview(&["classify", "--case", case, "--model", p(&model)]));
    assert!((c["p_neg"].as_f64().unwrap() + c["p_pos"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(c["model_version"], trained["model_version"]);

    let report = stdout_json(&ctview(&["eval", "--data", p(&data), "--folds", "2", "--epochs", "1", "--bootstrap", "50"]));
    assert_eq!(report["predictions"].as_array().unwrap().len(), 6);
    let roc = report["roc"].as_array().unwrap();
    assert_eq!(roc.first().unwrap(), &json!([0.0, 0.0]));
    assert_eq!(roc.last().unwrap(), &json!([1.0, 1.0]));
}
