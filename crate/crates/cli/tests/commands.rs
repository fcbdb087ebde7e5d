use std::path::Path;
use std::process::{Command, Output};

fn ers(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ers"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const FAST: &str =
    "seed = 1\n[pretext]\nepochs = 2\n[scan]\nepochs = 5\n[selflabel]\nenabled = false\n";

#[test]
fn train_eval_report_round() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", FAST);
    let run = dir.path().join("run");
    let out = ers(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "config.toml",
        "dataset.txt",
        "metrics.jsonl",
        "manifest.json",
    ] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let ckpts: Vec<_> = std::fs::read_dir(run.join("checkpoints"))
        .unwrap()
        .collect();
    assert_eq!(ckpts.len(), 4);

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run.join("manifest.json")).unwrap()).unwrap();
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), 7);
    for f in files {
        let path = f["path"].as_str().unwrap();
        assert!(!Path::new(path).is_absolute());
        let bytes = std::fs::read(run.join(path)).unwrap();
        assert_eq!(
            f["sha256"].as_str().unwrap(),
            ers_cli::manifest::sha256_hex(&bytes)
        );
    }

    // the echoed config parses back to the same configuration
    let echoed = std::fs::read_to_string(run.join("config.toml")).unwrap();
    let original = ers_cli::parse_config(FAST).unwrap();
    assert_eq!(ers_cli::parse_config(&echoed).unwrap(), original);

    let bundle = dir.path().join("bundle");
    let echo = run.join("config.toml");
    let out = ers(&[
        "eval",
        "--config",
        echo.to_str().unwrap(),
        "--checkpoints",
        run.join("checkpoints").to_str().unwrap(),
        "--out",
        bundle.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let topk = std::fs::read_to_string(bundle.join("topk.csv")).unwrap();
    assert_eq!(topk.lines().count(), 5);
    assert!(topk.starts_with("k,subsets,best,mean,median"));

    let out = ers(&["report", bundle.to_str().unwrap()]);
    assert!(out.status.success());
    let summary = String::from_utf8(out.stdout).unwrap();
    assert!(summary.contains("members: 4"));
    assert!(summary.contains("majority vote accuracy"));
    assert!(summary.contains("2-guess"));
    let first = std::fs::read(bundle.join("tables/members.csv")).unwrap();
    ers(&["report", bundle.to_str().unwrap()]);
    assert_eq!(
        std::fs::read(bundle.join("tables/members.csv")).unwrap(),
        first
    );

    // a second run into the same directory is refused
    let out = ers(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn single_checkpoint_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &format!("{FAST}[lambda]\nvectors = [[0.0, 5.0, 0.0, 0.0]]\n"),
    );
    let run = dir.path().join("run");
    assert!(
        ers(&["train", "--config", &cfg, "--out", run.to_str().unwrap()])
            .status
            .success()
    );
    let bundle = dir.path().join("bundle");
    let ckpt = run.join("checkpoints/member-00.ckpt");
    let out = ers(&[
        "eval",
        "--config",
        &cfg,
        "--checkpoints",
        ckpt.to_str().unwrap(),
        "--out",
        bundle.to_str().unwrap(),
        "--subclass-scoring",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let topk = std::fs::read_to_string(bundle.join("topk.csv")).unwrap();
    assert_eq!(topk.lines().count(), 2);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(bundle.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["label_space"], "sub");
    assert_eq!(report["report"]["n_labels"], 12);
}

#[test]
fn other_dataset_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &format!("{FAST}[lambda]\nvectors = [[0.0, 5.0, 0.0, 0.0]]\n"),
    );
    let other = write_config(
        dir.path(),
        "other.toml",
        &format!("{FAST}[lambda]\nvectors = [[0.0, 5.0, 0.0, 0.0]]\n[data]\nseed = 99\n"),
    );
    let run = dir.path().join("run");
    assert!(
        ers(&["train", "--config", &cfg, "--out", run.to_str().unwrap()])
            .status
            .success()
    );
    let bundle = dir.path().join("bundle");
    let out = ers(&[
        "eval",
        "--config",
        &other,
        "--checkpoints",
        run.join("checkpoints").to_str().unwrap(),
        "--out",
        bundle.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different dataset"));
    assert!(!bundle.join("report.json").exists());
}

#[test]
fn corrupt_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", FAST);
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"ERSCKPT garbage").unwrap();
    let out = ers(&[
        "eval",
        "--config",
        &cfg,
        "--checkpoints",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("b").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "seed = 1\n[scan]\nepocs = 3\n");
    let run = dir.path().join("run");
    let out = ers(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("epocs") && err.contains("line 3"), "{err}");
    assert!(!run.exists());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &format!("{FAST}[lambda]\nvectors = [[0.0, 5.0, 0.0, 0.0]]\n"),
    );
    let run = dir.path().join("run");
    let out = ers(&[
        "train",
        "--config",
        &cfg,
        "--out",
        run.to_str().unwrap(),
        "--seed",
        "42",
    ]);
    assert!(out.status.success());
    let echoed =
        ers_cli::parse_config(&std::fs::read_to_string(run.join("config.toml")).unwrap()).unwrap();
    assert_eq!(echoed.seed, Some(42));
}

#[test]
fn usage_errors() {
    assert_eq!(ers(&["report", ""]).status.code(), Some(1));
    assert_eq!(
        ers(&["report", "/nonexistent/bundle"]).status.code(),
        Some(1)
    );
    assert_eq!(ers(&["train"]).status.code(), Some(1));
    assert_eq!(ers(&["bogus"]).status.code(), Some(1));
}

#[test]
fn grad_check_passes() {
    let out = ers(&["grad-check"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 6);
}
