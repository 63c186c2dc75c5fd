use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hat-bench"))
        .args(args)
        .output()
        .expect("spawn hat-bench")
}

fn ok(args: &[&str]) -> String {
    let out = bench(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn continual_then_forget() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&["continual", "--tasks", "3", "--out", out]);
    let csv = read(dir.path(), "accuracy.csv");
    assert_eq!(csv.lines().count(), 1 + 6);
    assert!(csv.starts_with("task_trained,task_evaluated,accuracy\n"));
    assert!(dir.path().join("continual.ckpt").exists());

    let stdout = ok(&["forget", "--out", out]);
    assert!(stdout.contains("After Forgetting Task 0"));
    let report = read(dir.path(), "forget_report.txt");
    assert!(report.lines().last().unwrap().starts_with("total="));
    let forget = read(dir.path(), "forget.csv");
    let rows: Vec<Vec<f64>> = forget
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0][1] <= 0.6);
    for r in &rows[1..] {
        assert!((r[0] - r[1]).abs() < 0.005);
    }
}

#[test]
fn continual_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["continual", "--tasks", "2", "--seed", "11", "--out", dir.path().to_str().unwrap()];
    ok(&args);
    let (csv, ckpt) = (read(dir.path(), "accuracy.csv"), fs::read(dir.path().join("continual.ckpt")).unwrap());
    ok(&args);
    assert_eq!(read(dir.path(), "accuracy.csv"), csv);
    assert_eq!(fs::read(dir.path().join("continual.ckpt")).unwrap(), ckpt);
}

#[test]
fn toy_init_single_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&["toy-init", "--repeats", "3", "--init", "ones", "--schedule", "cosine", "--out", out]);
    let metrics = read(dir.path(), "metrics.csv");
    assert_eq!(metrics.lines().next(), Some("repeat,strategy,batches,completed"));
    assert_eq!(metrics.lines().count(), 4);
    assert!(metrics.lines().skip(1).all(|l| l.contains(",hat-cl,") && l.ends_with(",true")));
    assert!(read(dir.path(), "toy.md").contains("| hat-cl |"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.cfg");
    fs::write(&file, "# test\nseed = 5\ntasks = 7\nlambda = 0.5\n").unwrap();
    let text = ok(&["--config", file.to_str().unwrap(), "--tasks", "2", "--print-config"]);
    assert!(text.contains("seed = 5\n"));
    assert!(text.contains("tasks = 2\n"));
    assert!(text.contains("lambda = 0.5\n"));
}

#[test]
fn print_config_lists_every_default() {
    let text = ok(&["--print-config"]);
    for key in ["seed", "repeats", "tasks", "s_max", "schedule", "init", "lambda", "hidden", "toy.cap", "out"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{key} = "))), "{key}");
    }
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["forget", "--out", dir.path().to_str().unwrap()],
        vec!["continual", "--schedule", "step"],
        vec!["toy-init", "--repeats", "0"],
        vec!["--config", "/definitely/missing.cfg", "continual"],
    ] {
        let out = bench(&args);
        assert!(!out.status.success(), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
    }
}
