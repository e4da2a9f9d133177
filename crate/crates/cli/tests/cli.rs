use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dia-rescore"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

#[test]
fn score_without_checkpoint_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["score", "--out", "o", "--run", "missing.jsonl"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("score stage failed"), "{err}");
    assert!(err.contains("checkpoint"), "{err}");
}

#[test]
fn unknown_config_key_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "fdr = 0.01\n").unwrap();
    let out = run(&["synth", "--config", "c.toml", "--out", "o"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration"));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn invalid_fdr_flag_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["report", "--out", "o", "--fdr", "1.5"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn synth_writes_library_runs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "[synth]\nn_peptides = 12\ngradient_minutes = 5.0\n[experiment]\nentrapment_peptides = 4\n",
    )
    .unwrap();
    let out = run(&["synth", "--config", "c.toml", "--out", "o", "--seed", "4"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("o");
    for f in ["library.tsv", "entrapment.tsv", "A1.jsonl", "A1.truth.jsonl", "manifest_synth.json"] {
        assert!(o.join(f).is_file(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(o.join("manifest_synth.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["config"]["synth"]["seed"], 4);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    let truth = std::fs::read_to_string(o.join("A1.truth.jsonl")).unwrap();
    assert_eq!(truth.lines().count(), 12);
}
