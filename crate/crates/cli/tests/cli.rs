use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL_GRID: [&str; 6] = ["--grid-lambdas", "3", "--grid-gammas", "3", "--folds", "3"];

fn vpsvm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vpsvm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = vpsvm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn field<'a>(stdout: &'a str, key: &str) -> &'a str {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(": ")))
        .unwrap_or_else(|| panic!("no `{key}` in\n{stdout}"))
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn toy(dir: &TempDir, name: &str, n: usize, seed: u64) -> PathBuf {
    let path = p(dir, name);
    let (n, seed) = (n.to_string(), seed.to_string());
    ok(&["toy-sample", "--dim", "2", "--n", &n, "--seed", &seed, "--output", s(&path)]);
    path
}

fn train(data: &Path, model: &Path, extra: &[&str]) -> String {
    let mut args = vec!["train", "--train", s(data), "--model", s(model)];
    args.extend_from_slice(&SMALL_GRID);
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn train_save_reload_predict() {
    let dir = TempDir::new().unwrap();
    let data = toy(&dir, "train.libsvm", 1500, 1);
    let model = p(&dir, "m.model");
    let preds = p(&dir, "preds.csv");
    let out = train(&data, &model, &["--cell-size", "300", "--seed", "3"]);
    let cells: usize = field(&out, "cells").parse().unwrap();
    assert!(cells >= 5, "{out}");

    let pred = ok(&["predict", "--model", s(&model), "--test", s(&data), "--output", s(&preds)]);
    assert_eq!(field(&pred, "test error"), field(&out, "training error"));
    assert_eq!(
        field(&pred, "kernel evaluations"),
        field(&pred, "kernel evaluations (routed support counts)")
    );

    let csv = std::fs::read_to_string(&preds).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# vpsvm"));
    assert_eq!(lines.next(), Some("value,label,cell"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 1500);
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        let v: f64 = cols[0].parse().unwrap();
        assert!((-1.0..=1.0).contains(&v));
        assert!(cols[2].parse::<usize>().unwrap() < cells);
    }
}

#[test]
fn same_seed_gives_identical_model_files() {
    let dir = TempDir::new().unwrap();
    let data = toy(&dir, "train.csv", 800, 2);
    let (a, b) = (p(&dir, "a.model"), p(&dir, "b.model"));
    train(&data, &a, &["--cell-size", "200", "--seed", "5"]);
    train(&data, &b, &["--cell-size", "200", "--seed", "5", "--workers", "1"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let data = toy(&dir, "train.libsvm", 300, 3);
    let model = p(&dir, "m.model");
    train(&data, &model, &["--cell-size", "150"]);

    let empty = p(&dir, "empty.libsvm");
    std::fs::write(&empty, "").unwrap();
    let out = vpsvm(&["predict", "--model", s(&model), "--test", s(&empty)]);
    assert_eq!(out.status.code(), Some(4));

    let bad = p(&dir, "bad.libsvm");
    std::fs::write(&bad, "+1 1:0.5\nnot-a-label 1:0.2\n").unwrap();
    let out = vpsvm(&["predict", "--model", s(&model), "--test", s(&bad)]);
    assert_eq!(out.status.code(), Some(3));

    assert_eq!(vpsvm(&["train", "--bogus"]).status.code(), Some(2));
    let out = vpsvm(&["train", "--train", s(&data), "--model", s(&model), "--folds", "1"]);
    assert_eq!(out.status.code(), Some(4));
    let out = vpsvm(&["toy-rate", "--sizes", "64,128", "--runs", "1", "--constants", "1,2"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn saved_partition_reproduces_training() {
    let dir = TempDir::new().unwrap();
    let data = toy(&dir, "train.libsvm", 900, 4);
    let part = p(&dir, "cells.part");
    let stats = p(&dir, "stats.csv");
    let out = ok(&[
        "partition", "--data-file", s(&data), "--output", s(&part), "--cell-size", "200", "--seed", "8",
        "--stats", s(&stats),
    ]);
    assert_eq!(field(&out, "samples"), "900");
    let cells: usize = field(&out, "cells").parse().unwrap();
    assert_eq!(std::fs::read_to_string(&stats).unwrap().lines().count(), cells + 2);

    let (direct, reused) = (p(&dir, "direct.model"), p(&dir, "reused.model"));
    train(&data, &direct, &["--cell-size", "200", "--seed", "8"]);
    train(&data, &reused, &["--cell-size", "200", "--seed", "8", "--from-partition", s(&part)]);
    assert_eq!(std::fs::read(&direct).unwrap(), std::fs::read(&reused).unwrap());
}

#[test]
fn toy_rate_writes_rows_and_slopes() {
    let dir = TempDir::new().unwrap();
    let csv = p(&dir, "rate.csv");
    ok(&[
        "toy-rate", "--sizes", "128,256,512,1024,2048", "--runs", "5", "--constants", "8,1,1.6", "--n-mc",
        "2000", "--output", s(&csv),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let runs = text
        .lines()
        .filter(|l| l.split(',').nth(2).is_some_and(|c| c.parse::<usize>().is_ok()))
        .count();
    assert_eq!(runs, 25);
    let theoretical = text
        .lines()
        .find_map(|l| l.strip_prefix("4,slope,theoretical,"))
        .unwrap();
    let v: f64 = theoretical.trim_end_matches(',').parse().unwrap();
    assert!((v + 2.0 / 7.0).abs() < 1e-12);
    assert!(text.lines().any(|l| l.starts_with("4,slope,fitted,")));
}

#[test]
fn chunks_predict_with_every_support_vector() {
    let dir = TempDir::new().unwrap();
    let data = toy(&dir, "train.libsvm", 1000, 6);
    let test = toy(&dir, "test.libsvm", 200, 7);
    let (sp, ch) = (p(&dir, "spatial.model"), p(&dir, "chunks.model"));
    train(&data, &sp, &["--cell-size", "250"]);
    let out = train(&data, &ch, &["--strategy", "chunks", "--cell-size", "250"]);
    let support: u64 = field(&out, "support vectors").parse().unwrap();

    let evals = |model: &Path| -> u64 {
        let out = ok(&["predict", "--model", s(model), "--test", s(&test)]);
        field(&out, "kernel evaluations").parse().unwrap()
    };
    assert_eq!(evals(&ch), 200 * support);
    assert!(evals(&sp) < evals(&ch));
}
