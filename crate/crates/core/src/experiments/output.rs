//! Report emitters: CSV, markdown and the forget report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::continual::{AccuracyMatrix, ForgetOutcome};
use super::toy::{mean_batches, ToyRun};
use crate::error::{Error, Result};

/// Six significant digits, fixed notation: `0.9965` → `0.996500`.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.5}");
    }
    let digits = |v: f64| v.abs().log10().floor() as i32 + 1;
    let decimals = |d: i32| (6 - d).max(0) as usize;
    let s = format!("{:.*}", decimals(digits(x)), x);
    // rounding can carry into a new leading digit (0.9999996 -> 1.000000)
    let rounded: f64 = s.parse().unwrap_or(x);
    if digits(rounded) != digits(x) {
        return format!("{:.*}", decimals(digits(rounded)), rounded);
    }
    s
}

pub fn accuracy_csv(m: &AccuracyMatrix) -> String {
    let mut s = String::from("task_trained,task_evaluated,accuracy\n");
    for (r, row) in m.rows().iter().enumerate() {
        for (c, &acc) in row.iter().enumerate() {
            let _ = writeln!(s, "{r},{c},{}", fmt_sig(acc));
        }
    }
    s
}

/// Rows "After Training on Task r", columns "Task c Acc.", percentages.
pub fn accuracy_markdown(m: &AccuracyMatrix, forget: Option<&ForgetOutcome>) -> String {
    let n = m.len();
    let mut s = String::from("|");
    for c in 0..n {
        let _ = write!(s, " | Task {c} Acc.");
    }
    s.push_str(" |\n|---");
    s.push_str(&"|---:".repeat(n));
    s.push_str("|\n");
    let mut row_line = |label: String, row: &[f64]| {
        let _ = write!(s, "| {label}");
        for c in 0..n {
            match row.get(c) {
                Some(&a) => {
                    let _ = write!(s, " | {}%", fmt_sig(a * 100.0));
                }
                None => s.push_str(" | "),
            }
        }
        s.push_str(" |\n");
    };
    for (r, row) in m.rows().iter().enumerate() {
        row_line(format!("After Training on Task {r}"), row);
    }
    if let Some(f) = forget {
        row_line(format!("After Forgetting Task {}", f.task), &f.after);
    }
    s
}

pub fn metrics_csv(runs: &[ToyRun]) -> String {
    let mut s = String::from("repeat,strategy,batches,completed\n");
    for r in runs {
        let _ = writeln!(s, "{},{},{},{}", r.repeat, r.strategy, r.batches, r.completed);
    }
    s
}

pub fn toy_markdown(runs: &[ToyRun]) -> String {
    let mut s = String::from("| Strategy | Avg. Number of Batches | Completed |\n|---|---:|---:|\n");
    for (name, mean) in mean_batches(runs) {
        let of: Vec<&ToyRun> = runs.iter().filter(|r| r.strategy == name).collect();
        let done = of.iter().filter(|r| r.completed).count();
        let _ = writeln!(s, "| {name} | {} | {done}/{} |", fmt_sig(mean), of.len());
    }
    s
}

pub fn forget_csv(f: &ForgetOutcome) -> String {
    let mut s = String::from("task_evaluated,before,after\n");
    for (t, (b, a)) in f.before.iter().zip(&f.after).enumerate() {
        let _ = writeln!(s, "{t},{},{}", fmt_sig(*b), fmt_sig(*a));
    }
    s
}

/// Writes `contents` to `dir/name`, creating `dir` if needed.
pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_sig(0.9965), "0.996500");
        assert_eq!(fmt_sig(1.0), "1.00000");
        assert_eq!(fmt_sig(0.5), "0.500000");
        assert_eq!(fmt_sig(338.5), "338.500");
        assert_eq!(fmt_sig(99.65), "99.6500");
        assert_eq!(fmt_sig(0.0), "0.00000");
        assert_eq!(fmt_sig(0.9999996), "1.00000");
        assert_eq!(fmt_sig(123456789.0), "123456789");
    }

    #[test]
    fn empty_matrix_is_header_only() {
        assert_eq!(accuracy_csv(&AccuracyMatrix::new()), "task_trained,task_evaluated,accuracy\n");
    }

    #[test]
    fn five_tasks_give_fifteen_rows() {
        let mut m = AccuracyMatrix::new();
        for r in 0..5 {
            m.push_row(vec![1.0; r + 1]).unwrap();
        }
        assert_eq!(accuracy_csv(&m).lines().count(), 16);
        let md = accuracy_markdown(&m, None);
        assert!(md.starts_with("| | Task 0 Acc. | Task 1 Acc."));
        assert_eq!(md.lines().count(), 7);
        assert!(md.contains("| After Training on Task 0 | 100.000% |  |"));
    }

    #[test]
    fn toy_table_and_metrics() {
        let runs = vec![
            ToyRun { repeat: 0, strategy: "original".into(), batches: 300, completed: true },
            ToyRun { repeat: 0, strategy: "hat-cl".into(), batches: 20, completed: true },
            ToyRun { repeat: 1, strategy: "original".into(), batches: 2000, completed: false },
            ToyRun { repeat: 1, strategy: "hat-cl".into(), batches: 30, completed: true },
        ];
        assert_eq!(
            metrics_csv(&runs),
            "repeat,strategy,batches,completed\n0,original,300,true\n0,hat-cl,20,true\n1,original,2000,false\n1,hat-cl,30,true\n"
        );
        let md = toy_markdown(&runs);
        assert!(md.contains("| original | 1150.00 | 1/2 |"), "{md}");
        assert!(md.contains("| hat-cl | 25.0000 | 2/2 |"), "{md}");
    }

    #[test]
    fn unwritable_path_reports_it() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = write_file(&blocker.join("sub"), "a.csv", "").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("file"));
    }
}
