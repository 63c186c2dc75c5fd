use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::init::EmbeddingInit;
use super::optim::Sgd;
use super::regularizer::regularizer;
use super::schedule::{ScheduleKind, ScheduleState};
use crate::autograd::Var;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::layers::E_MAX;
use crate::network::HatNetwork;
use crate::payload::{MaskScale, TaskId};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    pub task_count: usize,
    pub s_max: f64,
    pub schedule: ScheduleKind,
    pub init: EmbeddingInit,
    pub lr: f64,
    pub momentum: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            task_count: 5,
            s_max: 400.0,
            schedule: ScheduleKind::Cosine,
            init: EmbeddingInit::Ones,
            lr: 0.05,
            momentum: 0.9,
            lambda: 0.1,
            epochs: 5,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if self.task_count == 0 {
            return bad("task count must be at least 1".into());
        }
        if !(self.s_max > 1.0 && self.s_max.is_finite()) {
            return bad(format!("s_max must exceed 1, got {}", self.s_max));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// Mean batch loss, regularizer included.
    pub loss: f64,
    /// Training accuracy measured on the fly.
    pub accuracy: f64,
    pub batches: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TaskMetrics {
    pub epochs: Vec<EpochMetrics>,
    /// Loss of every batch in order.
    pub batch_losses: Vec<f64>,
}

impl TaskMetrics {
    pub fn batches(&self) -> usize {
        self.batch_losses.len()
    }
}

/// Sequential-task trainer. Holds the shuffling RNG and optimizer state;
/// momentum is cleared at the start of every task.
#[derive(Clone, Debug)]
pub struct Trainer {
    cfg: TrainerConfig,
    schedule: ScheduleState,
    sgd: Sgd,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(cfg: TrainerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer {
            schedule: ScheduleState::new(cfg.schedule, cfg.s_max),
            sgd: Sgd::new(cfg.lr, cfg.momentum),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    /// Trains `task` for the configured number of epochs and then finalizes
    /// its masks on every masker.
    pub fn train_task(&mut self, net: &mut HatNetwork, data: &Dataset, task: usize) -> Result<TaskMetrics> {
        if net.maskers().any(|m| m.is_finalized(task)) {
            return Err(Error::State(format!("task {task} is already finalized")));
        }
        let epochs = self.cfg.epochs;
        let metrics = self.fit(net, data, TaskId::new(task), epochs, |_, _| ControlFlow::Continue(()))?;
        for m in net.maskers_mut() {
            m.finalize(task, self.cfg.s_max)?;
        }
        Ok(metrics)
    }

    /// Runs up to `epochs` epochs without finalizing. After every step
    /// `on_batch` sees the network and the 1-based count of steps taken so
    /// far; returning `Break` stops training immediately.
    pub fn fit<F>(
        &mut self,
        net: &mut HatNetwork,
        data: &Dataset,
        task: TaskId,
        epochs: usize,
        mut on_batch: F,
    ) -> Result<TaskMetrics>
    where
        F: FnMut(&HatNetwork, usize) -> ControlFlow<()>,
    {
        if data.is_empty() {
            return Err(Error::Validation("cannot train on an empty dataset".into()));
        }
        if (net.task_count(), net.s_max()) != (self.cfg.task_count, self.cfg.s_max) {
            return Err(Error::Validation(format!(
                "network built for {} tasks at s_max {}, trainer configured for {} at {}",
                net.task_count(),
                net.s_max(),
                self.cfg.task_count,
                self.cfg.s_max
            )));
        }
        self.sgd.reset();
        let mut metrics = TaskMetrics::default();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let total = data.len().div_ceil(self.cfg.batch_size);
        for _ in 0..epochs {
            order.shuffle(&mut self.rng);
            let (mut loss_sum, mut correct) = (0.0, 0usize);
            let mut stop = false;
            let mut seen = 0;
            for (b, rows) in order.chunks(self.cfg.batch_size).enumerate() {
                let s = self.schedule.scale(b + 1, total);
                let (x, y) = data.batch(rows)?;
                let (loss, hits) = self.step(net, &x, &y, task, s)?;
                loss_sum += loss;
                correct += hits;
                seen += 1;
                metrics.batch_losses.push(loss);
                if on_batch(net, metrics.batch_losses.len()).is_break() {
                    stop = true;
                    break;
                }
            }
            let samples = (seen * self.cfg.batch_size).min(data.len());
            metrics.epochs.push(EpochMetrics {
                loss: loss_sum / seen as f64,
                accuracy: correct as f64 / samples as f64,
                batches: seen,
            });
            if stop {
                break;
            }
        }
        Ok(metrics)
    }

    /// One optimization step at mask scale `s`. Returns the batch loss and
    /// the number of correctly classified rows.
    pub fn step(
        &mut self,
        net: &mut HatNetwork,
        x: &Tensor,
        y: &[usize],
        task: TaskId,
        s: f64,
    ) -> Result<(f64, usize)> {
        let mut g = Graph::new();
        let scale = MaskScale::new(s, self.cfg.s_max)?;
        let logits = net.logits(&mut g, x, task, scale, true)?;
        let hits = correct(g.tape.value(logits), y);
        let mut loss = g.tape.softmax_cross_entropy(logits, y)?;
        if let (Some(t), true) = (task.get(), self.cfg.lambda > 0.0) {
            let reg = mask_regularizer(&mut g, net, t, s)?;
            let weighted = g.tape.scale(reg, self.cfg.lambda)?;
            loss = g.tape.add(loss, weighted)?;
        }
        let value = g.tape.value(loss).item()?;
        g.backward(loss)?;
        self.sgd.step(net, &g)?;
        for m in net.maskers_mut() {
            m.clamp_embeddings(E_MAX);
        }
        net.apply_norm_stats(g.norm_stats());
        Ok((value, hits))
    }
}

/// The quota regularizer over every masker of `net` whose embedding for
/// `task` is bound in `g`, with the current masks taken at scale `s`.
pub fn mask_regularizer(g: &mut Graph, net: &HatNetwork, task: usize, s: f64) -> Result<Var> {
    let mut layers = Vec::new();
    for m in net.maskers() {
        if let Some(e) = g.var_of(&m.embedding_key(task)) {
            let se = g.tape.scale(e, s)?;
            let a = g.tape.sigmoid(se)?;
            layers.push((a, m.cumulative().data()));
        }
    }
    regularizer(g, &layers, net.task_count())
}

/// Convenience wrapper: a fresh [`Trainer`] for one task.
pub fn train_task(net: &mut HatNetwork, data: &Dataset, task: usize, cfg: &TrainerConfig) -> Result<TaskMetrics> {
    Trainer::new(cfg.clone())?.train_task(net, data, task)
}

/// Fraction of `data` classified correctly under `task` at `s_max`.
/// Ties go to the lowest class index.
pub fn evaluate(net: &HatNetwork, data: &Dataset, task: TaskId) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Validation("cannot evaluate on an empty dataset".into()));
    }
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut hits = 0;
    for chunk in rows.chunks(256) {
        let (x, y) = data.batch(chunk)?;
        hits += correct(&net.predict(&x, task)?, &y);
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Row-wise argmax (first maximum wins).
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let cols = logits.shape()[1];
    logits
        .data()
        .chunks(cols)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

fn correct(logits: &Tensor, y: &[usize]) -> usize {
    argmax_rows(logits).iter().zip(y).filter(|(p, t)| p == t).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::data::{cluster_tasks, ClusterSpec};
    use crate::layers::HatLinear;
    use crate::network::{Layer, MlpSpec};
    use crate::training::init_embeddings;

    fn plain_net(rng: &mut ChaCha8Rng) -> HatNetwork {
        HatNetwork::new(1, 400.0)
            .unwrap()
            .push(Layer::Linear(HatLinear::new("fc0", 4, 6, 1, rng)))
            .push(Layer::Relu)
            .push(Layer::Linear(HatLinear::new("fc1", 6, 2, 1, rng)))
    }

    fn weights(net: &HatNetwork) -> Vec<Tensor> {
        net.state()
            .into_iter()
            .filter(|(k, _)| !k.contains(".mask."))
            .map(|(_, t)| t.clone())
            .collect()
    }

    #[test]
    fn plain_mode_without_regularizer_is_ordinary_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = plain_net(&mut rng);
        let cfg = TrainerConfig {
            task_count: 1,
            lambda: 0.0,
            ..TrainerConfig::default()
        };
        let mut trainer = Trainer::new(cfg.clone()).unwrap();

        // reference: hand-built two-layer perceptron with the same update rule
        let mut params = weights(&net);
        let mut velocity: Vec<Option<Tensor>> = vec![None; params.len()];
        let batches: Vec<(Tensor, Vec<usize>)> = (0..8)
            .map(|i| {
                let x: Vec<f64> = (0..12).map(|j| ((i * 12 + j) as f64 * 0.37).sin()).collect();
                (Tensor::matrix(3, 4, x).unwrap(), vec![i % 2, 1, 0])
            })
            .collect();
        for (b, (x, y)) in batches.iter().enumerate() {
            let (hat_loss, _) = trainer.step(&mut net, x, y, TaskId::plain(), 0.5).unwrap();

            let mut tape = Tape::new();
            let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), true)).collect();
            let xv = tape.constant(x.clone());
            let w0 = tape.permute(vars[0], &[1, 0]).unwrap();
            let h = tape.matmul(xv, w0).unwrap();
            let h = tape.add(h, vars[1]).unwrap();
            let h = tape.relu(h).unwrap();
            let w1 = tape.permute(vars[2], &[1, 0]).unwrap();
            let o = tape.matmul(h, w1).unwrap();
            let o = tape.add(o, vars[3]).unwrap();
            let loss = tape.softmax_cross_entropy(o, y).unwrap();
            let plain_loss = tape.value(loss).item().unwrap();
            tape.backward(loss).unwrap();
            for (i, v) in vars.iter().enumerate() {
                let grad = tape.grad(*v).unwrap();
                let vel = match velocity[i].take() {
                    Some(old) => old.zip_map(grad, |o, g| cfg.momentum * o + g).unwrap(),
                    None => grad.clone(),
                };
                params[i] = params[i].zip_map(&vel, |p, v| p - cfg.lr * v).unwrap();
                velocity[i] = Some(vel);
            }
            assert!((hat_loss - plain_loss).abs() < 1e-9, "batch {b}: {hat_loss} vs {plain_loss}");
        }
        for (a, b) in weights(&net).iter().zip(&params) {
            assert!(a.zip_map(b, |x, y| (x - y).abs()).unwrap().max_abs() < 1e-9);
        }
    }

    fn continual_setup(tasks: usize) -> (HatNetwork, Vec<crate::data::TaskData>, TrainerConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = ClusterSpec {
            dims: 8,
            train: 200,
            test: 100,
            ..ClusterSpec::default()
        };
        let data = cluster_tasks(tasks, &spec, &mut rng).unwrap();
        let mlp = MlpSpec {
            inputs: 8,
            hidden: vec![32],
            classes: 2,
            input_gate: false,
        };
        let cfg = TrainerConfig {
            task_count: tasks,
            epochs: 2,
            ..TrainerConfig::default()
        };
        let mut net = HatNetwork::mlp(&mlp, tasks, cfg.s_max, &mut rng).unwrap();
        init_embeddings(&mut net, cfg.init, &mut rng).unwrap();
        (net, data, cfg)
    }

    #[test]
    fn earlier_task_is_protected() {
        let (mut net, data, cfg) = continual_setup(2);
        let mut trainer = Trainer::new(cfg).unwrap();
        let m = trainer.train_task(&mut net, &data[0].train, 0).unwrap();
        assert_eq!(m.epochs.len(), 2);
        let before = evaluate(&net, &data[0].test, TaskId::new(0)).unwrap();
        assert!(before > 0.95, "task 0 accuracy {before}");
        trainer.train_task(&mut net, &data[1].train, 1).unwrap();
        let after = evaluate(&net, &data[0].test, TaskId::new(0)).unwrap();
        assert!((after - before).abs() < 1e-3, "{before} -> {after}");
    }

    #[test]
    fn retraining_a_finalized_task_is_state_error() {
        let (mut net, data, cfg) = continual_setup(2);
        let mut trainer = Trainer::new(cfg).unwrap();
        trainer.train_task(&mut net, &data[0].train, 0).unwrap();
        assert!(matches!(
            trainer.train_task(&mut net, &data[0].train, 0),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn evaluation_is_pure_and_near_chance_untrained() {
        let (mut net, _, _) = continual_setup(1);
        // untrained hidden layer with a random head
        if let Some(Layer::Head(h)) = net.layers_mut().last_mut() {
            *h.module_mut(0).unwrap() = crate::layers::Linear::new(32, 2, &mut ChaCha8Rng::seed_from_u64(2));
        }
        let big = cluster_tasks(
            1,
            &ClusterSpec {
                dims: 8,
                separation: 0.0,
                train: 1,
                test: 1000,
            },
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        let a = evaluate(&net, &big[0].test, TaskId::new(0)).unwrap();
        let b = evaluate(&net, &big[0].test, TaskId::new(0)).unwrap();
        assert_eq!(a, b);
        assert!((a - 0.5).abs() <= 0.1, "{a}");
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainerConfig { task_count: 0, ..Default::default() },
            TrainerConfig { lambda: -1.0, ..Default::default() },
            TrainerConfig { s_max: 1.0, ..Default::default() },
            TrainerConfig { batch_size: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(Trainer::new(cfg), Err(Error::Validation(_))));
        }
    }

    #[test]
    fn argmax_prefers_first_maximum() {
        let t = Tensor::matrix(3, 2, vec![0.0, 0.0, 1.0, 2.0, 3.0, -1.0]).unwrap();
        assert_eq!(argmax_rows(&t), vec![0, 1, 0]);
    }
}
