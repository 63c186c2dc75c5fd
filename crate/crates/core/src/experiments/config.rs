//! Experiment configuration as `key = value` text.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error so typos do not silently fall back to defaults.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::toy::{Strategy, ToyConfig};
use crate::data::ClusterSpec;
use crate::error::{Error, Result};
use crate::training::{EmbeddingInit, ScheduleKind, TrainerConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub repeats: usize,
    /// Number of tasks; also the quota denominator.
    pub tasks: usize,
    pub s_max: f64,
    pub schedule: ScheduleKind,
    pub init: EmbeddingInit,
    pub lambda: f64,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub clusters: ClusterSpec,
    pub toy: ToyConfig,
    /// `None` compares the two reference strategies.
    pub toy_strategy: Option<(EmbeddingInit, ScheduleKind)>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainerConfig::default();
        ExperimentConfig {
            seed: 0,
            repeats: 100,
            tasks: t.task_count,
            s_max: t.s_max,
            schedule: t.schedule,
            init: t.init,
            lambda: t.lambda,
            lr: t.lr,
            momentum: t.momentum,
            epochs: t.epochs,
            batch_size: t.batch_size,
            hidden: vec![64, 64],
            clusters: ClusterSpec::default(),
            toy: ToyConfig::default(),
            toy_strategy: None,
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Validation(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = num(key, value)?,
            "repeats" => self.repeats = num(key, value)?,
            "tasks" => self.tasks = num(key, value)?,
            "s_max" => self.s_max = num(key, value)?,
            "schedule" => self.schedule = value.parse()?,
            "init" => self.init = value.parse()?,
            "lambda" => self.lambda = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "hidden" => {
                self.hidden = value
                    .split(',')
                    .map(|v| num(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "dims" => self.clusters.dims = num(key, value)?,
            "separation" => self.clusters.separation = num(key, value)?,
            "train" => self.clusters.train = num(key, value)?,
            "test" => self.clusters.test = num(key, value)?,
            "toy.samples" => self.toy.samples = num(key, value)?,
            "toy.noise" => self.toy.noise = num(key, value)?,
            "toy.hidden" => self.toy.hidden = num(key, value)?,
            "toy.batch_size" => self.toy.batch_size = num(key, value)?,
            "toy.cap" => self.toy.cap = num(key, value)?,
            "toy.theta_hi" => self.toy.theta_hi = num(key, value)?,
            "toy.theta_lo" => self.toy.theta_lo = num(key, value)?,
            "toy.strategy" => {
                self.toy_strategy = match value {
                    "both" => None,
                    _ => {
                        let (i, s) = value.split_once('+').ok_or_else(|| {
                            Error::Validation(format!("toy.strategy must be `both` or `<init>+<schedule>`, got `{value}`"))
                        })?;
                        Some((i.parse()?, s.parse()?))
                    }
                }
            }
            "out" => self.out = PathBuf::from(value),
            _ => return Err(Error::Validation(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Validation("repeats must be at least 1".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Validation("hidden sizes must be positive".into()));
        }
        if self.toy.cap == 0 || self.toy.samples == 0 || self.toy.hidden == 0 {
            return Err(Error::Validation("toy sizes must be positive".into()));
        }
        if self.clusters.train == 0 || self.clusters.test == 0 || self.clusters.dims == 0 {
            return Err(Error::Validation("cluster sizes must be positive".into()));
        }
        self.trainer().validate()?;
        self.toy_trainer_check()
    }

    fn toy_trainer_check(&self) -> Result<()> {
        let toy = self.toy_config();
        if !(0.0 < toy.theta_lo && toy.theta_lo < toy.theta_hi && toy.theta_hi < 1.0) {
            return Err(Error::Validation("toy thresholds must satisfy 0 < theta_lo < theta_hi < 1".into()));
        }
        if toy.batch_size == 0 {
            return Err(Error::Validation("toy batch size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn trainer(&self) -> TrainerConfig {
        TrainerConfig {
            task_count: self.tasks,
            s_max: self.s_max,
            schedule: self.schedule,
            init: self.init,
            lr: self.lr,
            momentum: self.momentum,
            lambda: self.lambda,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    /// Toy settings with the shared optimizer and task fields applied.
    pub fn toy_config(&self) -> ToyConfig {
        ToyConfig {
            tasks: self.tasks,
            s_max: self.s_max,
            lambda: self.lambda,
            lr: self.lr,
            momentum: self.momentum,
            ..self.toy.clone()
        }
    }

    pub fn toy_strategies(&self) -> Vec<Strategy> {
        match self.toy_strategy {
            Some((init, schedule)) => vec![Strategy::new(init, schedule)],
            None => Strategy::both(),
        }
    }

    /// Every field in `key = value` form; [`ExperimentConfig::parse`]
    /// reads it back to an equal value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("repeats", self.repeats.to_string());
        kv("tasks", self.tasks.to_string());
        kv("s_max", self.s_max.to_string());
        kv("schedule", self.schedule.to_string());
        kv("init", self.init.to_string());
        kv("lambda", self.lambda.to_string());
        kv("lr", self.lr.to_string());
        kv("momentum", self.momentum.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv(
            "hidden",
            self.hidden.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        );
        kv("dims", self.clusters.dims.to_string());
        kv("separation", self.clusters.separation.to_string());
        kv("train", self.clusters.train.to_string());
        kv("test", self.clusters.test.to_string());
        kv("toy.samples", self.toy.samples.to_string());
        kv("toy.noise", self.toy.noise.to_string());
        kv("toy.hidden", self.toy.hidden.to_string());
        kv("toy.batch_size", self.toy.batch_size.to_string());
        kv("toy.cap", self.toy.cap.to_string());
        kv("toy.theta_hi", self.toy.theta_hi.to_string());
        kv("toy.theta_lo", self.toy.theta_lo.to_string());
        kv(
            "toy.strategy",
            match self.toy_strategy {
                None => "both".to_owned(),
                Some((i, s)) => format!("{i}+{s}"),
            },
        );
        kv("out", self.out.display().to_string());
        s
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Validation(format!("bad value `{value}` for `{key}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.hidden = vec![8, 4];
        cfg.toy_strategy = Some((EmbeddingInit::Gaussian, ScheduleKind::Cosine));
        cfg.lambda = 0.25;
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(
            ExperimentConfig::parse(&ExperimentConfig::default().to_text()).unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn comments_and_partial_files() {
        let cfg = ExperimentConfig::parse("# comment\n\nseed = 7\ntasks=3\n").unwrap();
        assert_eq!((cfg.seed, cfg.tasks), (7, 3));
        assert_eq!(cfg.s_max, 400.0);
    }

    #[test]
    fn errors_name_the_line() {
        let err = ExperimentConfig::parse("seed = 1\nbogus = 2\n").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("bogus"), "{err}");
        assert!(ExperimentConfig::parse("seed 1").is_err());
        assert!(ExperimentConfig::parse("repeats = 0").is_err());
        assert!(ExperimentConfig::parse("lambda = -1").is_err());
        assert!(ExperimentConfig::parse("schedule = step").is_err());
    }
}
