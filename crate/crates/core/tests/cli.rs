//! Drives the `stylefusion` binary end to end on a tiny corpus.

use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"seed = 5
d_model = 16
d_style = 8
d_spk = 8
latent_channels = 4
text_layers = 1
flow_layers = 2
enc_hidden = 16
dur_hidden = 8
speakers = 2
styles = 4
utterances_per_cell = 3
heldout_per_cell = 1
batch_size = 2
steps = 2
data_dir = "data"
out_dir = "run"
"#;

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stylefusion")).args(args).current_dir(dir).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = bin(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    ok(dir.path(), &["gen-data", "--config", "tiny.toml"]);
    dir
}

fn stderr_line(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stderr).to_string();
    let lines: Vec<&str> = text.lines().filter(|l| l.starts_with("error[")).collect();
    assert_eq!(lines.len(), 1, "{text}");
    lines[0].to_string()
}

#[test]
fn full_pipeline_is_reproducible() {
    let dir = setup();
    let d = dir.path();
    assert!(d.join("data/manifest.jsonl").exists());
    ok(d, &["train", "--config", "tiny.toml"]);
    let log = std::fs::read_to_string(d.join("run/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["config_hash"].is_string() && v["seed"] == 5, "{line}");
    }

    let spk = "data/spec/spk00_angry_000.spec";
    assert!(d.join(spk).exists(), "reference file layout changed");
    for out in ["a.spec", "b.spec"] {
        ok(
            d,
            &["synth", "run/model.ckpt", "well hello", "--speaker-ref", spk, "--prompt", "a cheerful voice", "--seed", "3", "--out", out],
        );
    }
    assert_eq!(std::fs::read(d.join("a.spec")).unwrap(), std::fs::read(d.join("b.spec")).unwrap());
    let info: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("a.spec.json")).unwrap()).unwrap();
    let durations: u64 = info["durations"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(info["frames"].as_u64().unwrap(), durations);

    ok(d, &["export-embeddings", "run/model.ckpt", "--sites", "input,post_style", "--out", "emb.tsv"]);
    let tsv = std::fs::read_to_string(d.join("emb.tsv")).unwrap();
    let rows = tsv.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 1 + 2 * 24, "header plus one row per utterance and site");

    ok(d, &["eval", "run/model.ckpt", "--out", "ev"]);
    for f in ["metrics.txt", "metrics.jsonl", "disentanglement.json", "consistency.txt", "consistency.jsonl"] {
        assert!(d.join("ev").join(f).exists(), "{f}");
    }
}

#[test]
fn zero_steps_writes_an_empty_log() {
    let dir = setup();
    ok(dir.path(), &["train", "--config", "tiny.toml", "--steps", "0", "--out", "zero"]);
    assert_eq!(std::fs::read_to_string(dir.path().join("zero/train_log.jsonl")).unwrap(), "");
    assert!(dir.path().join("zero/model.ckpt").exists());
}

#[test]
fn missing_inputs_name_the_flag() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["train", "--config", "tiny.toml", "--steps", "0"]);
    let out = bin(d, &["synth", "run/model.ckpt", "hi", "--prompt", "calm"]);
    assert_eq!(out.status.code(), Some(1));
    let line = stderr_line(&out);
    assert!(line.starts_with("error[missing_input]") && line.contains("--speaker-ref"), "{line}");

    let out = bin(d, &["synth", "run/model.ckpt", "hi", "--speaker-ref", "data/spec/spk00_angry_000.spec"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).contains("--prompt"));
}

#[test]
fn usage_errors_are_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(dir.path(), &["train", "--fusion", "mlp"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error[usage]"));
    let out = bin(dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).starts_with("error[missing_input]"));
}
