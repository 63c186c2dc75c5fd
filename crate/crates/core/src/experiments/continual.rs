//! Sequential training on synthetic two-class tasks, with an accuracy
//! matrix after every task and selective forgetting from a checkpoint.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use crate::checkpoint::Checkpoint;
use crate::data::{cluster_tasks, TaskData};
use crate::error::{Error, Result};
use crate::forgetting::{forget_task, AttributionThreshold, ForgetReport};
use crate::network::{HatNetwork, MlpSpec};
use crate::payload::TaskId;
use crate::training::{evaluate, init_embeddings, TaskMetrics, Trainer};

/// Row `r` holds accuracies on tasks `0..=r` after training task `r`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(Error::dim("accuracy row", &[row.len()], &[self.rows.len() + 1]));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Largest change of any task's accuracy after the row it was first
    /// measured in.
    pub fn max_drift(&self) -> f64 {
        let mut drift: f64 = 0.0;
        for (c, first) in self.rows.iter().enumerate().map(|(r, row)| (r, row[r])) {
            for row in &self.rows[c..] {
                drift = drift.max((row[c] - first).abs());
            }
        }
        drift
    }
}

pub struct ContinualRun {
    pub net: HatNetwork,
    pub matrix: AccuracyMatrix,
    pub metrics: Vec<TaskMetrics>,
}

/// Task data depends on the seed alone, so it can be regenerated for a
/// network loaded from a checkpoint.
pub fn continual_data(cfg: &ExperimentConfig) -> Result<Vec<TaskData>> {
    cluster_tasks(cfg.tasks, &cfg.clusters, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

pub fn build_network(cfg: &ExperimentConfig) -> Result<HatNetwork> {
    let spec = MlpSpec {
        inputs: cfg.clusters.dims,
        hidden: cfg.hidden.clone(),
        classes: 2,
        input_gate: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut net = HatNetwork::mlp(&spec, cfg.tasks, cfg.s_max, &mut rng)?;
    init_embeddings(&mut net, cfg.init, &mut rng)?;
    Ok(net)
}

pub fn evaluate_upto(net: &HatNetwork, data: &[TaskData], last: usize) -> Result<Vec<f64>> {
    data[..=last]
        .iter()
        .enumerate()
        .map(|(t, d)| evaluate(net, &d.test, TaskId::new(t)))
        .collect()
}

pub fn run_continual(cfg: &ExperimentConfig) -> Result<ContinualRun> {
    cfg.validate()?;
    let data = continual_data(cfg)?;
    let mut net = build_network(cfg)?;
    let mut trainer = Trainer::new(cfg.trainer())?;
    let mut matrix = AccuracyMatrix::new();
    let mut metrics = Vec::new();
    for (t, task) in data.iter().enumerate() {
        metrics.push(trainer.train_task(&mut net, &task.train, t)?);
        matrix.push_row(evaluate_upto(&net, &data, t)?)?;
    }
    Ok(ContinualRun { net, matrix, metrics })
}

/// Network checkpoint with the generating configuration embedded.
pub fn save_checkpoint(net: &HatNetwork, cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let mut ck = Checkpoint::from_network(net);
    ck.set_meta(&cfg.to_text());
    ck.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<(HatNetwork, ExperimentConfig)> {
    let ck = Checkpoint::load(path)?;
    let text = ck
        .meta()
        .ok_or_else(|| Error::Format("checkpoint has no embedded configuration".into()))?;
    let cfg = ExperimentConfig::parse(&text)?;
    let mut net = build_network(&cfg)?;
    ck.restore(&mut net)?;
    Ok((net, cfg))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForgetOutcome {
    pub task: usize,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
    pub report: ForgetReport,
}

/// Evaluates every finalized task, forgets `task`, and evaluates again.
pub fn run_forget(net: &mut HatNetwork, cfg: &ExperimentConfig, task: usize) -> Result<ForgetOutcome> {
    let data = continual_data(cfg)?;
    let finalized = net
        .maskers()
        .next()
        .map_or(0, |m| m.finalized_tasks().count());
    if finalized == 0 {
        return Err(Error::Usage("checkpoint holds no trained tasks".into()));
    }
    let last = finalized - 1;
    let before = evaluate_upto(net, &data, last)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let report = forget_task(net, task, AttributionThreshold::default(), cfg.init, &mut rng)?;
    let after = evaluate_upto(net, &data, last)?;
    Ok(ForgetOutcome {
        task,
        before,
        after,
        report,
    })
}
