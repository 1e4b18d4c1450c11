use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use stagecf::interactions::load_interactions;
use stagecf::pipeline::run_verification;
use stagecf::verification::sampler_ratio;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stagecf"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn binary")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, users: usize, items: usize, seed: u64) -> (PathBuf, PathBuf) {
    ok(&[
        "synth",
        "--users",
        &users.to_string(),
        "--items",
        &items.to_string(),
        "--seed",
        &seed.to_string(),
        "--output-dir",
        s(dir),
    ]);
    (dir.join("train.txt"), dir.join("test.txt"))
}

const SMALL: &[&str] = &[
    "--k",
    "20",
    "--steps",
    "20",
    "--hidden",
    "32",
    "--max-epochs",
    "4",
    "--lr",
    "1e-3",
    "--batch-size",
    "16",
    "--seed",
    "5",
];

fn train(train: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--train", s(train), "--output-dir", s(out)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    run(&args)
}

fn recommend(train: &Path, out: &Path, ckpt: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "recommend",
        "--train",
        s(train),
        "--output-dir",
        s(out),
        "--checkpoint",
        s(ckpt),
    ];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    run(&args)
}

fn evaluate(train: &Path, test: &Path, out: &Path, recs: &Path) -> Output {
    let mut args = vec![
        "evaluate",
        "--train",
        s(train),
        "--test",
        s(test),
        "--output-dir",
        s(out),
        "--recommendations",
        s(recs),
    ];
    args.extend_from_slice(SMALL);
    run(&args)
}

#[test]
fn synth_is_byte_identical_and_holds_out_a_fifth() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ta, sa) = synth(a.path(), 200, 100, 7);
    let (tb, sb) = synth(b.path(), 200, 100, 7);
    assert_eq!(fs::read(&ta).unwrap(), fs::read(&tb).unwrap());
    assert_eq!(fs::read(&sa).unwrap(), fs::read(&sb).unwrap());

    let train = load_interactions(&ta, None, None).unwrap();
    let test = load_interactions(&sa, Some(train.n_users()), Some(train.n_items())).unwrap();
    let ratio = test.nnz() as f64 / (train.nnz() + test.nnz()) as f64;
    assert!((ratio - 0.2).abs() < 0.02, "{ratio}");
    // Every line is `user item item ...` with the user id first.
    for (u, line) in fs::read_to_string(&ta).unwrap().lines().enumerate() {
        assert_eq!(line.split(' ').next().unwrap(), u.to_string());
    }
}

#[test]
fn missing_file_exits_two_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    let out = train(&missing, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.txt"));
}

#[test]
fn bad_flag_value_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let (tr, _) = synth(dir.path(), 20, 10, 1);
    let out = train(&tr, dir.path(), &["--dropout", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn end_to_end_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let (tr, te) = synth(dir.path(), 50, 40, 2);
    let started = Instant::now();
    let out_a = dir.path().join("a");
    let out = train(&tr, &out_a, &[]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "checkpoint.bin",
        "train_log.txt",
        "validation_curve.tsv",
        "best_epoch.json",
        "config.toml",
    ] {
        assert!(out_a.join(f).exists(), "{f}");
    }
    let ckpt = out_a.join("checkpoint.bin");
    assert!(recommend(&tr, &out_a, &ckpt, &[]).status.success());
    let recs = out_a.join("recommendations.tsv");
    let out = evaluate(&tr, &te, &out_a, &recs);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(started.elapsed().as_secs() < 60);

    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(out_a.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(report["groups"].as_array().unwrap().len(), 3);

    let mut per_user = std::collections::BTreeMap::<usize, usize>::new();
    for line in fs::read_to_string(&recs).unwrap().lines() {
        let user: usize = line.split('\t').next().unwrap().parse().unwrap();
        *per_user.entry(user).or_default() += 1;
    }
    assert!(per_user.values().all(|&n| n <= 50));

    // Same config and seed: identical checkpoint and identical lists.
    let out_b = dir.path().join("b");
    assert!(train(&tr, &out_b, &[]).status.success());
    assert_eq!(
        fs::read(&ckpt).unwrap(),
        fs::read(out_b.join("checkpoint.bin")).unwrap()
    );
    assert!(recommend(&tr, &out_b, &ckpt, &[]).status.success());
    assert_eq!(
        fs::read(&recs).unwrap(),
        fs::read(out_b.join("recommendations.tsv")).unwrap()
    );

    // Sampler choice does not invalidate the checkpoint.
    assert!(recommend(&tr, &out_b, &ckpt, &["--sampler", "poisson"])
        .status
        .success());

    // A different training config is refused with both hashes shown.
    let out = recommend(&tr, &out_b, &ckpt, &["--gamma", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    let hashes = err
        .split(|c: char| !c.is_ascii_hexdigit())
        .filter(|w| w.len() == 64)
        .count();
    assert!(hashes >= 2, "{err}");
}

#[test]
fn oracle_lists_score_one_and_full_catalog_user_gets_empty_list() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // User 0 owns the whole catalog; user 3 has no test items.
    fs::write(d.join("train.txt"), "0 0 1 2 3 4 5\n1 0\n2 1 2\n3 4\n").unwrap();
    fs::write(d.join("test.txt"), "0\n1 3 5\n2 0\n3\n").unwrap();
    let (tr, te) = (d.join("train.txt"), d.join("test.txt"));

    let mut lines = String::new();
    for (u, items) in [
        (1, vec![3, 5, 1, 2, 4]),
        (2, vec![0, 3, 4, 5]),
        (3, vec![0, 1, 2, 3, 5]),
    ] {
        for (r, i) in items.iter().enumerate() {
            lines += &format!("{u}\t{i}\t{}\t{}\n", 10 - r, r + 1);
        }
    }
    fs::write(d.join("oracle.tsv"), lines).unwrap();
    let out = evaluate(&tr, &te, d, &d.join("oracle.tsv"));
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for m in report["metrics"].as_array().unwrap() {
        assert_eq!(m["recall"].as_f64(), Some(1.0));
        assert!((m["ndcg"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    }
    assert_eq!(report["n_users"].as_u64(), Some(2));
    assert_eq!(report["n_users_skipped"].as_u64(), Some(1));

    // Recommend with a fresh checkpoint: user 0 gets nothing.
    let out_dir = d.join("run");
    let out = train(&tr, &out_dir, &["--valid", s(&te)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = recommend(&tr, &out_dir, &out_dir.join("checkpoint.bin"), &[]);
    assert!(out.status.success());
    let recs = fs::read_to_string(out_dir.join("recommendations.tsv")).unwrap();
    assert!(recs.lines().all(|l| !l.starts_with("0\t")));
    assert!(recs.lines().any(|l| l.starts_with("1\t")));
}

#[test]
fn verify_passes_and_flipped_ratio_is_caught() {
    let started = Instant::now();
    let out = ok(&["verify"]);
    assert!(started.elapsed().as_secs() < 300);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(
        text.lines().filter(|l| l.starts_with("PASS")).count(),
        4,
        "{text}"
    );
    assert!(!text.contains("FAIL"));

    let flipped = |p_prev: f64, p_now: f64| sampler_ratio(p_prev, p_now).map(|r| 1.0 - r);
    let report = run_verification(&flipped).unwrap();
    assert!(!report.suite("reverse_posterior").unwrap().passed);
}

#[test]
fn empty_validation_split_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("train.txt"), "0 1 2\n1 0 3\n").unwrap();
    let out = train(&dir.path().join("train.txt"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--valid"));
}
