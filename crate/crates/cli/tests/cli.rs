use std::path::Path;
use std::process::{Command, Output};

fn mil(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mil-screen"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mil(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Synthetic corpus plus a three-split suite in a fresh directory.
fn fixture() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--bags", "50", "--seed", "5", "--out-dir", "data"]);
    ok(
        d,
        &[
            "split", "--corpus", "data/corpus.jsonl", "--n-splits", "3", "--seed", "1", "--max-iterations", "300",
            "--out-dir", "suite",
        ],
    );
    tmp
}

const EMB: [&str; 4] = [
    "--embeddings",
    "data/embeddings/text.milemb",
    "--embeddings",
    "data/embeddings/image.milemb",
];

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("run-manifest.json")).unwrap()).unwrap()
}

/// Every listed artifact exists; CSVs open with the manifest line and JSON
/// reports carry the hash.
fn check_artifacts(dir: &Path) {
    let m = manifest(dir);
    let hash = m["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    let artifacts = m["artifacts"].as_array().unwrap();
    assert!(!artifacts.is_empty());
    for a in artifacts {
        let rel = a.as_str().unwrap();
        let path = dir.join(rel);
        assert!(path.is_file(), "{rel} missing");
        if rel.ends_with(".csv") {
            let text = std::fs::read_to_string(&path).unwrap();
            assert_eq!(text.lines().next().unwrap(), format!("# manifest={hash}"), "{rel}");
        } else if rel.ends_with(".json") {
            let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
            assert_eq!(v["manifest_hash"], hash, "{rel}");
        }
    }
}

#[test]
fn full_pipeline_writes_reports() {
    let tmp = fixture();
    let d = tmp.path();
    check_artifacts(&d.join("suite"));
    assert!(manifest(&d.join("data"))["artifacts"].as_array().unwrap().len() > 4);

    let stats = ok(d, &["stats", "--corpus", "data/corpus.jsonl", "--out-dir", "stats"]);
    assert!(stats.contains("severe"));
    check_artifacts(&d.join("stats"));

    let mut args = vec!["eval", "--corpus", "data/corpus.jsonl", "--suite", "suite", "--model-kind", "fusion"];
    args.extend(EMB);
    args.extend(["--out-dir", "eval"]);
    let summary = ok(d, &args);
    assert!(summary.contains("f1"));
    check_artifacts(&d.join("eval"));
    for f in ["report.json", "report.csv", "roc.csv", "pr.csv", "predictions_00.csv", "predictions_02.csv"] {
        assert!(d.join("eval").join(f).is_file(), "{f}");
    }
    let roc = std::fs::read_to_string(d.join("eval/roc.csv")).unwrap();
    assert_eq!(roc.lines().nth(1), Some("threshold,x,y"));

    let mut args = vec!["train", "--corpus", "data/corpus.jsonl", "--suite", "suite", "--split", "1"];
    args.extend(["--model-kind", "image-emb"]);
    args.extend(EMB);
    args.extend(["--out-dir", "train"]);
    ok(d, &args);
    check_artifacts(&d.join("train"));
    let ckpt = std::fs::read(d.join("train/model.milnn")).unwrap();
    assert!(ckpt.starts_with(b"MILNN v1\n"));

    ok(d, &["train", "--corpus", "data/corpus.jsonl", "--suite", "suite", "--model-kind", "svm", "--out-dir", "svm"]);
    check_artifacts(&d.join("svm"));

    ok(d, &["featurize", "--corpus", "data/corpus.jsonl", "--out-dir", "feat"]);
    check_artifacts(&d.join("feat"));
    let users = std::fs::read_to_string(d.join("feat/users_visual.csv")).unwrap();
    assert_eq!(users.lines().nth(1).unwrap().split(',').count(), 1 + 12 + 1);

    ok(d, &["analyze", "--corpus", "data/corpus.jsonl", "--out-dir", "analysis"]);
    check_artifacts(&d.join("analysis"));
    for f in ["hashtags.csv", "svm_text.csv", "svm_visual.csv", "svm_concat.csv", "svm_demographics.csv"] {
        assert!(d.join("analysis").join(f).is_file(), "{f}");
    }
}

#[test]
fn same_seed_gives_identical_bytes() {
    let tmp = fixture();
    let d = tmp.path();
    for out in ["a", "b"] {
        let mut args = vec!["eval", "--corpus", "data/corpus.jsonl", "--suite", "suite", "--model-kind", "text-emb"];
        args.extend(EMB);
        args.extend(["--seed", "7", "--out-dir", out]);
        ok(d, &args);
    }
    for f in ["report.json", "report.csv", "roc.csv", "pr.csv", "predictions_01.csv", "run-manifest.json"] {
        assert_eq!(std::fs::read(d.join("a").join(f)).unwrap(), std::fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    let mut args = vec!["eval", "--corpus", "data/corpus.jsonl", "--suite", "suite", "--model-kind", "text-emb"];
    args.extend(EMB);
    args.extend(["--seed", "8", "--out-dir", "c"]);
    ok(d, &args);
    assert_ne!(manifest(&d.join("a"))["config_hash"], manifest(&d.join("c"))["config_hash"]);
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = mil(d, &["eval", "--corpus", "x.jsonl", "--suite", "no/such/suite", "--model-kind", "fusion"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no/such/suite"));

    let out = mil(d, &["stats", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = mil(d, &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));

    let out = mil(d, &["stats"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("broken.jsonl"), "{not json\n").unwrap();
    let out = mil(d, &["stats", "--corpus", "broken.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn embed_check_reports_bad_and_incomplete_files() {
    let tmp = fixture();
    let d = tmp.path();
    let s = ok(d, &["embed", "check", "data/embeddings/text.milemb", "data/embeddings/image.milemb", "--corpus", "data/corpus.jsonl"]);
    assert_eq!(s.lines().filter(|l| l.starts_with("ok")).count(), 2);

    let mut bytes = std::fs::read(d.join("data/embeddings/text.milemb")).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(d.join("short.milemb"), &bytes).unwrap();
    let out = mil(d, &["embed", "check", "short.milemb"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("FAIL"));

    std::fs::write(d.join("tiny.csv"), "MILEMB v1 text tiny 2 1\nnot_a_post,0.5,0.25\n").unwrap();
    ok(d, &["embed", "check", "tiny.csv"]);
    let out = mil(d, &["embed", "check", "tiny.csv", "--corpus", "data/corpus.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("posts without a vector"));
}

#[test]
fn config_file_values_yield_to_flags() {
    let tmp = fixture();
    let d = tmp.path();
    std::fs::write(
        d.join("run.toml"),
        "corpus = \"data/corpus.jsonl\"\nwindow = 60\nseed = 4\n[train]\nepochs = 3\n",
    )
    .unwrap();
    ok(d, &["--config", "run.toml", "stats", "--out-dir", "s60"]);
    ok(d, &["--config", "run.toml", "stats", "--window", "365", "--out-dir", "s365"]);
    assert_eq!(manifest(&d.join("s60"))["config"]["window"], 60);
    assert_eq!(manifest(&d.join("s365"))["config"]["window"], 365);

    let mut args = vec!["--config", "run.toml", "eval", "--suite", "suite", "--model-kind", "text-emb"];
    args.extend(EMB);
    args.extend(["--out-dir", "e"]);
    ok(d, &args);
    let m = manifest(&d.join("e"));
    assert_eq!(m["config"]["pipeline"]["train"]["epochs"], 3);
    assert_eq!(m["config"]["pipeline"]["train"]["seed"], 4);

    std::fs::write(d.join("bad.toml"), "nonsense = true\n").unwrap();
    assert_eq!(mil(d, &["--config", "bad.toml", "stats"]).status.code(), Some(2));
}

#[test]
fn kfold_protocol_runs() {
    let tmp = fixture();
    let d = tmp.path();
    ok(d, &["eval", "--corpus", "data/corpus.jsonl", "--kfold", "5", "--model-kind", "text-bow", "--out-dir", "k"]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("k/report.json")).unwrap()).unwrap();
    assert_eq!(report["splits"].as_array().unwrap().len(), 5);
    assert_eq!(report["config"]["protocol"], "kfold-5");
    let out = mil(d, &["eval", "--corpus", "data/corpus.jsonl", "--kfold", "5", "--suite", "suite", "--model-kind", "svm"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn threshold_flags_reach_the_pipeline() {
    let tmp = fixture();
    let d = tmp.path();
    let base = ["eval", "--corpus", "data/corpus.jsonl", "--suite", "suite", "--model-kind", "text-bow"];
    let mut args = base.to_vec();
    args.extend(["--tune-threshold", "--out-dir", "tuned"]);
    ok(d, &args);
    assert_eq!(manifest(&d.join("tuned"))["config"]["pipeline"]["tune_threshold"], true);
    let mut args = base.to_vec();
    args.extend(["--threshold", "0.3", "--out-dir", "low"]);
    ok(d, &args);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("low/report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["threshold"], 0.3);
    let mut args = base.to_vec();
    args.extend(["--threshold", "1.5"]);
    assert_eq!(mil(d, &args).status.code(), Some(2));
}
