use std::path::Path;
use std::process::Command;

fn diematch(args: &[&str], cwd: &Path) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_diematch"))
        .args(args)
        .current_dir(cwd)
        .env_remove("DIEMATCH_CACHE_DIR")
        .output()
        .expect("spawn diematch");
    assert!(
        out.status.success(),
        "diematch {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn synth_train_score_cluster_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("config.json"), r#"{"registration": {"n_descriptor_samples": 500}}"#).unwrap();
    diematch(&["synth", "--dies", "2", "--coins-per-die", "3", "--seed", "5", "--out", "corpus"], d);
    assert!(d.join("corpus/manifest.json").is_file());

    diematch(&["train", "--manifest", "corpus/manifest.json", "--out", "model.txt", "--config", "config.json"], d);
    let model = std::fs::read_to_string(d.join("model.txt")).unwrap();
    assert!(model.starts_with("diematch-logistic v1\n"));
    assert_eq!(model.lines().filter(|l| l.starts_with('w')).count(), 70);

    let score = [
        "score", "--manifest", "corpus/manifest.json", "--model", "model.txt", "--config", "config.json",
        "--cache", "cache", "--out", "scores.csv",
    ];
    diematch(&score, d);
    let first = std::fs::read(d.join("scores.csv")).unwrap();
    assert!(first.starts_with(b"id_a,id_b,probability,rmse,seconds\n"));
    assert!(d.join("cache/pairs.jsonl").is_file());

    // A rerun is served from the cache and reproduces the file.
    diematch(&score, d);
    assert_eq!(std::fs::read(d.join("scores.csv")).unwrap(), first);

    diematch(
        &["cluster", "--scores", "scores.csv", "--manifest", "corpus/manifest.json", "--tau", "0.95", "--out", "clusters.csv"],
        d,
    );
    let clusters = std::fs::read_to_string(d.join("clusters.csv")).unwrap();
    assert_eq!(clusters.lines().count(), 1 + 6);

    let metrics = diematch(&["metrics", "--pred", "clusters.csv", "--truth", "corpus/manifest.json"], d);
    assert!(metrics.contains("fmi 1.000000"), "{metrics}");
    assert!(metrics.contains("ari 1.000000"), "{metrics}");
}

#[test]
fn ingest_builds_a_manifest_from_ply_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    diematch(&["synth", "--dies", "1", "--coins-per-die", "2", "--out", "corpus"], d);
    diematch(&["ingest", "--dir", "corpus", "--out", "ingested.json"], d);
    diematch::pipeline::CorpusManifest::load(d.join("ingested.json")).unwrap();
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("ingested.json")).unwrap()).unwrap();
    let entries = m["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 2);
    assert!(entries.iter().all(|e| e["face"] == "reverse"));
}

#[test]
fn bad_input_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_diematch"))
        .args(["train", "--manifest", "missing.json", "--out", "m.txt"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}
