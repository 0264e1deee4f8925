use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    run_env(args, &[])
}

fn run_env(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_searchkd"));
    cmd.args(args).env("RUST_LOG", "warn").env_remove("SEARCHKD_OUT");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(args: &[&str]) -> serde_json::Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(stdout.lines().last().unwrap()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Data {
    dir: TempDir,
}

impl Data {
    fn new(task: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("data");
        ok(&["make-synthetic", "--task", task, "--size", "40", "--out", out.to_str().unwrap()]);
        Data { dir }
    }

    fn file(&self, name: &str) -> String {
        self.dir.path().join("data").join(name).to_string_lossy().into_owned()
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_is_a_one_line_usage_error() {
    let out = run(&["train", "--no-such-flag", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr(&out).trim().lines().count(), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("no-such-flag"));
}

#[test]
fn missing_input_fails_with_one_line() {
    let d = tempfile::tempdir().unwrap();
    let out_dir = d.path().join("o");
    let out = run(&["train", "--task", "parse", "--train", "/nonexistent/train.conllu", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert!(err.contains("/nonexistent/train.conllu"));
    assert!(!out_dir.exists());
}

#[test]
fn failed_run_leaves_only_a_partial_directory() {
    let data = Data::new("parse");
    let out_dir = data.out("bad");
    let out = run(&[
        "distill",
        "--task",
        "parse",
        "--train",
        &data.file("train.conllu"),
        "--ensemble",
        "/nonexistent/ensemble.json",
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_dir.exists());
    let partial = data.out("bad.partial");
    if partial.exists() {
        assert!(!partial.join("manifest.txt").exists());
    }
}

#[test]
fn existing_output_directory_is_refused() {
    let data = Data::new("parse");
    let out = run(&["make-synthetic", "--task", "parse", "--size", "20", "--out", &data.file("")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("already exists"));
}

#[test]
fn output_root_comes_from_the_environment() {
    let d = tempfile::tempdir().unwrap();
    let out = run_env(&["make-synthetic", "--task", "transduce", "--size", "20"], &[("SEARCHKD_OUT", d.path())]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(d.path().join("make-synthetic").join("train.tsv").exists());
    assert!(d.path().join("make-synthetic").join("manifest.txt").exists());

    let none = run(&["make-synthetic", "--task", "transduce", "--size", "20"]);
    assert_eq!(none.status.code(), Some(1));
    assert!(stderr(&none).contains("SEARCHKD_OUT"));
}

#[test]
fn flags_override_config_file_values() {
    let data = Data::new("parse");
    let cfg = data.out("run.cfg");
    fs::write(&cfg, "# small run\nepochs=1\nseed=4\nembed-dim=4\nhidden-dim=8\n").unwrap();
    let out = data.out("train");
    let summary = ok(&[
        "train",
        "--config",
        s(&cfg),
        "--task",
        "parse",
        "--train",
        &data.file("train.conllu"),
        "--seed",
        "9",
        "--out",
        s(&out),
    ]);
    assert_eq!(summary["command"], "train");
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed=9\n"), "{manifest}");
    assert!(manifest.contains("epochs=1\n"), "{manifest}");
    assert!(manifest.contains("embed-dim=4\n"), "{manifest}");
    assert_eq!(fs::read_to_string(out.join("train_log.tsv")).unwrap().lines().count(), 2);
}

#[test]
fn config_keys_are_validated() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.cfg");
    fs::write(&cfg, "epochz=3\n").unwrap();
    let out = run(&["train", "--config", s(&cfg), "--task", "parse", "--train", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("epochz"));
}

#[test]
fn scoring_the_references_gives_a_perfect_score() {
    let data = Data::new("transduce");
    let test = data.file("test.tsv");
    let refs: String = fs::read_to_string(&test)
        .unwrap()
        .lines()
        .map(|l| l.split('\t').nth(1).unwrap().to_string() + "\n")
        .collect();
    let hyp = data.out("refs.txt");
    fs::write(&hyp, refs).unwrap();
    let summary = ok(&["eval", "--task", "transduce", "--test", &test, "--hypotheses", s(&hyp), "--out", s(&data.out("e"))]);
    assert_eq!(summary["score"], 100.0);

    let parse = Data::new("parse");
    let test = parse.file("test.conllu");
    let summary = ok(&["eval", "--task", "parse", "--test", &test, "--hypotheses", &test, "--out", s(&parse.out("e"))]);
    assert_eq!(summary["score"], 100.0);
}

#[test]
fn alpha_sweep_has_one_row_per_grid_point() {
    let data = Data::new("transduce");
    let common = ["--task", "transduce", "--train", &data.file("train.tsv"), "--dev", &data.file("dev.tsv"), "--epochs", "1", "--embed-dim", "4", "--hidden-dim", "8"];
    let ens = data.out("ens");
    ok(&[&["train-ensemble", "--m", "2", "--out", s(&ens)], &common[..]].concat());
    let manifest = ens.join("ensemble.json");
    let sweep = data.out("sweep");
    let summary = ok(&[
        &["sweep", "--ensemble", s(&manifest), "--parameter", "alpha", "--grid", "0:1:0.1", "--out", s(&sweep)],
        &common[..],
    ]
    .concat());
    let csv = fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 12, "{csv}");
    assert!(csv.starts_with("alpha,"));
    assert!(summary["spread"].as_f64().unwrap() >= 0.0);
}

#[test]
fn ensembles_do_not_depend_on_the_thread_count() {
    let data = Data::new("parse");
    let args = ["train-ensemble", "--task", "parse", "--train", &data.file("train.conllu"), "--m", "3", "--epochs", "1"];
    let (a, b) = (data.out("j1"), data.out("j3"));
    ok(&[&args[..], &["--jobs", "1", "--out", s(&a)]].concat());
    ok(&[&args[..], &["--jobs", "3", "--out", s(&b)]].concat());
    for i in 0..3 {
        let name = format!("members/member-{i}.bin");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name}");
    }
}

#[test]
fn inputs_are_not_modified() {
    let data = Data::new("parse");
    let train = data.file("train.conllu");
    let before = fs::read(&train).unwrap();
    ok(&["train", "--task", "parse", "--train", &train, "--epochs", "1", "--out", s(&data.out("t"))]);
    assert_eq!(fs::read(&train).unwrap(), before);
}

#[test]
fn help_exits_cleanly() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["make-synthetic", "train-ensemble", "distill", "analyze-states", "stability", "rerun"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}
