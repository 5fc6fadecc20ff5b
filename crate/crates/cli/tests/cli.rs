use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn geolatent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geolatent"))
        .args(args)
        .output()
        .expect("spawn geolatent")
}

fn ok(args: &[&str]) -> Value {
    let out = geolatent(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(stdout.lines().last().expect("summary line")).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn flag_errors_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("missing");
    let model = dir.path().join("m.gae");
    let out = geolatent(&[
        "train", "--data", s(&data), "--radius", "0.1", "--latent-dim", "4", "--epochs", "0", "--out", s(&model),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!model.exists());

    let out = geolatent(&["--json", "train", "--data", s(&data), "--radius", "3", "--latent-dim", "4", "--out", s(&model)]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"], "usage");
    assert!(err["message"].as_str().unwrap().contains("radius"));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = geolatent(&[
        "--json",
        "psnr",
        "--model",
        s(&dir.path().join("nope.gae")),
        "--frame",
        s(&dir.path().join("nope.pds")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"], "runtime");
}

#[test]
fn convert_csv_file_and_directory() {
    let dir = tempfile::tempdir().unwrap();
    let csv_dir = dir.path().join("csv");
    std::fs::create_dir(&csv_dir).unwrap();
    for k in 0..2 {
        let mut text = String::from("x,y,z,temp\n");
        for i in 0..20 {
            text.push_str(&format!("{},{},{},{}\n", i, i * 2 + k, 1, i as f64 * 0.5));
        }
        std::fs::write(csv_dir.join(format!("frame_{k}.csv")), text).unwrap();
    }
    let single = ok(&["convert", "--input", s(&csv_dir.join("frame_0.csv")), "--out", s(&dir.path().join("one.pds"))]);
    assert_eq!(single["particles"], 20);
    assert_eq!(single["attributes"], serde_json::json!(["temp"]));

    let pds = dir.path().join("pds");
    let all = ok(&["convert", "--input", s(&csv_dir), "--out", s(&pds)]);
    assert_eq!(all["frames"], 2);
    assert_eq!(std::fs::read_dir(&pds).unwrap().count(), 2);
}

#[test]
fn pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("blob");
    let synth = ok(&["--seed", "3", "synth", "blob", "--out", s(&data), "--frames", "3", "--size", "4000"]);
    assert_eq!(synth["frames"], 3);
    assert!(data.join("truth.json").exists());

    let model = dir.path().join("m.gae");
    let log = dir.path().join("train.jsonl");
    ok(&[
        "--seed", "1", "train", "--data", s(&data), "--radius", "0.08", "--latent-dim", "3", "--epochs", "3",
        "--fraction", "0.1", "--out", s(&model), "--log", s(&log),
    ]);
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 3);

    let a = dir.path().join("frame_1-a.lat1");
    let b = dir.path().join("frame_1-b.lat1");
    for (out, threads) in [(&a, "1"), (&b, "0")] {
        ok(&["--threads", threads, "infer", "--model", s(&model), "--data", s(&data), "--frame", "1", "--out", s(out)]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let labels = dir.path().join("labels.json");
    let c = ok(&["cluster", "--latents", s(&a), "--k", "2", "--out", s(&labels)]);
    assert_eq!(c["k"], 2);
    let written: Value = serde_json::from_str(&std::fs::read_to_string(&labels).unwrap()).unwrap();
    assert_eq!(written["frame_id"], 1);

    let p = ok(&["psnr", "--model", s(&model), "--data", s(&data), "--frame", "0"]);
    assert!(p["psnr"].as_f64().unwrap().is_finite());

    let trace = dir.path().join("trace.json");
    ok(&[
        "track", "--data", s(&data), "--model", s(&model), "--start", "0", "--end", "2", "--center", "0.3,0.5,0.5",
        "--half-extent", "0.1", "--out", s(&trace),
    ]);
    let lines = std::fs::read_to_string(&trace).unwrap();
    let steps: Vec<Value> = lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(steps.len(), 2);
}
