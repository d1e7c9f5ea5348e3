use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 8] = [
    "--hidden-dim=16",
    "--embed-dim=8",
    "--head-hidden-dim=8",
    "--epochs=2",
    "--seed=3",
    "--verbosity=0",
    "--batch-size=4",
    "--loss-kind=ce_plus_cpl",
];

fn cpl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpl"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cpl(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p).unwrap()
}

/// Small geometric corpus split into train/test under `dir`.
fn prepared(dir: &Path) {
    ok(dir, &["gen", "--classes=4", "--per-class=8", "--seed=5", "--out=g"]);
    ok(dir, &["preprocess", "--input=g/corpus.jsonl", "--seed=5", "--out=p"]);
}

#[test]
fn gen_train_eval_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepared(dir);
    let corpus = read(dir.join("g/corpus.jsonl"));
    let mut args = vec!["train", "--data=p/train.jsonl", "--features=g/features.jsonl", "--out=t"];
    args.extend(SMALL);
    ok(dir, &args);
    let history = fs::read_to_string(dir.join("t/history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 2);
    let stdout = ok(
        dir,
        &["eval", "--checkpoint=t/checkpoint.json", "--data=p/test.jsonl", "--features=g/features.jsonl", "--out=e"],
    );
    assert!(stdout.contains("f1"));
    let report = fs::read_to_string(dir.join("e/report.json")).unwrap();
    assert!(report.contains("\"tp\""));
    ok(
        dir,
        &["stats", "--checkpoint=t/checkpoint.json", "--baseline=t/checkpoint.json", "--data=p/test.jsonl",
          "--features=g/features.jsonl", "--resamples=200", "--out=s"],
    );
    let stats = fs::read_to_string(dir.join("s/stats.json")).unwrap();
    assert!(stats.contains("\"ratio_factor\": 1.0"), "{stats}");
    ok(
        dir,
        &["export", "--checkpoint=t/checkpoint.json", "--data=g/corpus.jsonl", "--features=g/features.jsonl",
          "--classes=0", "--out=x"],
    );
    // header + origin + 8 mutants
    let csv = fs::read_to_string(dir.join("x/embeddings.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10);
    for sub in ["g", "p", "t", "e", "s", "x"] {
        assert!(dir.join(sub).join("manifest.txt").exists(), "{sub}");
    }
    assert_eq!(read(dir.join("g/corpus.jsonl")), corpus, "inputs are never modified");
}

#[test]
fn manifest_replay_reproduces_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepared(dir);
    let mut args = vec!["train", "--data=p/train.jsonl", "--features=g/features.jsonl", "--zeta", "-0.02", "--out=t"];
    args.extend(SMALL);
    ok(dir, &args);
    ok(dir, &["replay", "t/manifest.txt", "--out=r"]);
    for f in ["checkpoint.json", "history.jsonl"] {
        assert_eq!(read(dir.join("t").join(f)), read(dir.join("r").join(f)), "{f}");
    }
    let manifest = fs::read_to_string(dir.join("r/manifest.txt")).unwrap();
    assert!(manifest.contains("zeta = -0.02"));
    // replaying from another directory reads the same absolute inputs
    let elsewhere = tempfile::tempdir().unwrap();
    let m = dir.join("t/manifest.txt");
    ok(elsewhere.path(), &["replay", m.to_str().unwrap(), "--out=again"]);
    assert_eq!(read(dir.join("t/checkpoint.json")), read(elsewhere.path().join("again/checkpoint.json")));

    ok(dir, &["replay", "g/manifest.txt", "--out=g2"]);
    assert_eq!(read(dir.join("g/corpus.jsonl")), read(dir.join("g2/corpus.jsonl")));
    assert_eq!(read(dir.join("g/features.jsonl")), read(dir.join("g2/features.jsonl")));
}

#[test]
fn cpl_grid_sweep_has_56_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepared(dir);
    let mut args = vec![
        "sweep", "--train-data=p/train.jsonl", "--test-data=p/test.jsonl", "--features=g/features.jsonl",
        "--grid=cpl", "--workers=4", "--out=w",
    ];
    args.extend(SMALL);
    args.retain(|a| *a != "--epochs=2");
    args.push("--epochs=1");
    let stdout = ok(dir, &args);
    assert!(stdout.starts_with("56 cells"), "{stdout}");
    let csv = fs::read_to_string(dir.join("w/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 57);
    assert!(dir.join("w/sweep.txt").exists());

    let mut contrastive = args.clone();
    contrastive.retain(|a| *a != "--grid=cpl" && *a != "--out=w");
    contrastive.extend(["--grid=contrastive", "--lambdas=1.0", "--out=c"]);
    let stdout = ok(dir, &contrastive);
    assert!(stdout.starts_with("6 cells"), "{stdout}");
}

#[test]
fn invalid_zeta_is_a_usage_error_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepared(dir);
    let out = cpl(dir, &["train", "--data=p/train.jsonl", "--zeta=0.1.2", "--out=bad"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.join("bad").exists());
    let out = cpl(dir, &["train", "--data=p/train.jsonl", "--no-such-flag", "--out=bad"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(cpl(dir, &["frobnicate"]).status.code(), Some(2));
    assert!(!dir.join("bad").exists());
}

#[test]
fn domain_errors_exit_1_with_the_error_name() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepared(dir);
    let cases: [(&[&str], &str); 4] = [
        (&["train", "--data=p/train.jsonl", "--epochs=0", "--out=bad"], "ConfigError"),
        (&["eval", "--checkpoint=p/test.jsonl", "--data=p/test.jsonl", "--out=bad"], "DeserializeError"),
        (&["export", "--checkpoint=missing.json", "--data=p/test.jsonl", "--out=bad"], "IoError"),
        (&["preprocess", "--input=p/train.jsonl", "--out=p"], "ConfigError"),
    ];
    for (args, name) in cases {
        let out = cpl(dir, args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert!(err.starts_with(&format!("error: {name}: ")), "{args:?}: {err}");
        assert!(!dir.join("bad").exists());
    }
    // the refused preprocess left its input alone
    let train = fs::read_to_string(dir.join("p/train.jsonl")).unwrap();
    assert_eq!(train.lines().count(), 16);
}
