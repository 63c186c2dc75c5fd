//! `hat-bench`: runs the toy initialization study, the continual-learning
//! protocol and selective forgetting on synthetic data.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use hat_core::experiments::continual::{
    load_checkpoint, run_continual, run_forget, save_checkpoint, AccuracyMatrix,
};
use hat_core::experiments::output::{
    accuracy_csv, accuracy_markdown, forget_csv, metrics_csv, toy_markdown, write_file,
};
use hat_core::experiments::toy::{mean_batches, run_toy};
use hat_core::experiments::ExperimentConfig;
use hat_core::training::{EmbeddingInit, ScheduleKind};

const CHECKPOINT: &str = "continual.ckpt";

#[derive(Parser, Debug)]
#[command(name = "hat-bench", version, about = "HAT continual-learning experiments on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// key = value file; flags given on the command line take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Print the resolved configuration and exit
    #[arg(long, global = true)]
    print_config: bool,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Toy-experiment repeats per strategy
    #[arg(long, global = true)]
    repeats: Option<usize>,

    #[arg(long, global = true)]
    tasks: Option<usize>,

    #[arg(long, global = true)]
    s_max: Option<f64>,

    /// linear | cosine; for toy-init, restricts the run to one strategy
    #[arg(long, global = true)]
    schedule: Option<ScheduleKind>,

    /// ones | gaussian; for toy-init, restricts the run to one strategy
    #[arg(long, global = true)]
    init: Option<EmbeddingInit>,

    #[arg(long, global = true)]
    lambda: Option<f64>,

    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Compare embedding initialization and scale schedules on the toy task
    ToyInit,
    /// Train tasks sequentially, write the accuracy matrix and a checkpoint
    Continual,
    /// Forget one task of a saved continual checkpoint
    Forget {
        #[arg(long, default_value_t = 0)]
        task: usize,
    },
}

impl Cli {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.repeats {
            cfg.repeats = v;
        }
        if let Some(v) = self.tasks {
            cfg.tasks = v;
        }
        if let Some(v) = self.s_max {
            cfg.s_max = v;
        }
        if let Some(v) = self.schedule {
            cfg.schedule = v;
        }
        if let Some(v) = self.init {
            cfg.init = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if self.command == Some(Command::ToyInit) && (self.schedule.is_some() || self.init.is_some()) {
            cfg.toy_strategy = Some((cfg.init, cfg.schedule));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn toy_init(cfg: &ExperimentConfig) -> Result<()> {
    let runs = run_toy(&cfg.toy_config(), &cfg.toy_strategies(), cfg.seed, cfg.repeats)?;
    write_file(&cfg.out, "metrics.csv", &metrics_csv(&runs))?;
    let table = toy_markdown(&runs);
    write_file(&cfg.out, "toy.md", &table)?;
    print!("{table}");
    if let [(a, x), (b, y)] = mean_batches(&runs).as_slice() {
        println!("{a} / {b} = {:.2}", x / y);
    }
    Ok(())
}

fn continual(cfg: &ExperimentConfig) -> Result<()> {
    let run = run_continual(cfg)?;
    write_file(&cfg.out, "accuracy.csv", &accuracy_csv(&run.matrix))?;
    let table = accuracy_markdown(&run.matrix, None);
    write_file(&cfg.out, "accuracy.md", &table)?;
    save_checkpoint(&run.net, cfg, &cfg.out.join(CHECKPOINT))?;
    print!("{table}");
    Ok(())
}

/// Reads back an `accuracy.csv` written by `continual`.
fn read_matrix(path: &Path) -> Result<AccuracyMatrix> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let parsed = match cells.as_slice() {
            [r, c, a] => (r.parse::<usize>(), c.parse::<usize>(), a.parse::<f64>()),
            _ => bail!("{}:{}: expected three fields", path.display(), i + 1),
        };
        let (Ok(r), Ok(c), Ok(a)) = parsed else {
            bail!("{}:{}: malformed row `{line}`", path.display(), i + 1);
        };
        if r > rows.len() || (r == rows.len()) != (c == 0) || (r < rows.len() && c != rows[r].len()) {
            bail!("{}:{}: rows out of order", path.display(), i + 1);
        }
        if r == rows.len() {
            rows.push(Vec::new());
        }
        rows[r].push(a);
    }
    let mut m = AccuracyMatrix::new();
    for row in rows {
        m.push_row(row)?;
    }
    Ok(m)
}

fn forget(out: &Path, task: usize) -> Result<()> {
    let path = out.join(CHECKPOINT);
    if !path.exists() {
        bail!(hat_core::Error::Usage(format!(
            "no checkpoint at {}; run `continual` first",
            path.display()
        )));
    }
    let (mut net, ck_cfg) = load_checkpoint(&path)?;
    let outcome = run_forget(&mut net, &ck_cfg, task)?;
    write_file(out, "forget.csv", &forget_csv(&outcome))?;
    write_file(out, "forget_report.txt", &outcome.report.to_string())?;
    let matrix = match out.join("accuracy.csv") {
        p if p.exists() => read_matrix(&p)?,
        _ => AccuracyMatrix::new(),
    };
    let table = accuracy_markdown(&matrix, Some(&outcome));
    write_file(out, "forget.md", &table)?;
    print!("{table}{}", outcome.report);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve()?;
    if cli.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    match cli.command {
        Some(Command::ToyInit) => toy_init(&cfg),
        Some(Command::Continual) => continual(&cfg),
        Some(Command::Forget { task }) => forget(&cfg.out, task),
        None => bail!("no subcommand given; expected toy-init, continual or forget"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
