//! Initialization/schedule comparison on a five-feature toy problem where
//! only the first three features matter.

use std::ops::ControlFlow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::toy;
use crate::error::Result;
use crate::layers::attention;
use crate::network::{HatNetwork, MlpSpec};
use crate::payload::TaskId;
use crate::training::{init_embeddings, EmbeddingInit, ScheduleKind, Trainer, TrainerConfig};

pub const USEFUL_FEATURES: usize = 3;
pub const TOY_FEATURES: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    pub samples: usize,
    pub noise: f64,
    pub hidden: usize,
    pub tasks: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lambda: f64,
    pub s_max: f64,
    /// Give up after this many batches.
    pub cap: usize,
    pub theta_hi: f64,
    pub theta_lo: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            samples: 2048,
            noise: 0.1,
            hidden: 16,
            tasks: 5,
            batch_size: 16,
            lr: 0.05,
            momentum: 0.9,
            lambda: 0.1,
            s_max: 400.0,
            cap: 2000,
            theta_hi: 0.9,
            theta_lo: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Strategy {
    pub name: String,
    pub init: EmbeddingInit,
    pub schedule: ScheduleKind,
}

impl Strategy {
    pub fn new(init: EmbeddingInit, schedule: ScheduleKind) -> Self {
        let name = match (init, schedule) {
            (EmbeddingInit::Gaussian, ScheduleKind::Linear) => "original".to_owned(),
            (EmbeddingInit::Ones, ScheduleKind::Cosine) => "hat-cl".to_owned(),
            _ => format!("{init}+{schedule}"),
        };
        Strategy { name, init, schedule }
    }

    /// Gaussian init with the linear schedule, then ones with cosine.
    pub fn both() -> Vec<Strategy> {
        vec![
            Strategy::new(EmbeddingInit::Gaussian, ScheduleKind::Linear),
            Strategy::new(EmbeddingInit::Ones, ScheduleKind::Cosine),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyRun {
    pub repeat: usize,
    pub strategy: String,
    /// Batches until the input gate was properly trained, or the cap.
    pub batches: usize,
    pub completed: bool,
}

/// True once the gate at `s_max` opens every useful feature above
/// `theta_hi` and closes every useless one below `theta_lo`.
pub fn gate_settled(net: &HatNetwork, cfg: &ToyConfig) -> bool {
    let Some(gate) = net.maskers().next() else {
        return false;
    };
    let Ok(e) = gate.embedding(0) else {
        return false;
    };
    let a = attention(e, cfg.s_max);
    let a = a.data();
    a[..USEFUL_FEATURES].iter().all(|&v| v > cfg.theta_hi) && a[USEFUL_FEATURES..].iter().all(|&v| v < cfg.theta_lo)
}

/// One repeat of one strategy. Data, network weights and batch order depend
/// only on `seed`, so strategies are compared on identical problems.
pub fn toy_repeat(cfg: &ToyConfig, strategy: &Strategy, repeat: usize, seed: u64) -> Result<ToyRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = toy(cfg.samples, cfg.noise, &mut rng)?;
    let spec = MlpSpec {
        inputs: TOY_FEATURES,
        hidden: vec![cfg.hidden],
        classes: 2,
        input_gate: true,
    };
    let mut net = HatNetwork::mlp(&spec, cfg.tasks, cfg.s_max, &mut rng)?;
    let shuffle_seed = seed ^ 0x9e37_79b9_7f4a_7c15;
    init_embeddings(&mut net, strategy.init, &mut rng)?;

    let mut trainer = Trainer::new(TrainerConfig {
        task_count: cfg.tasks,
        s_max: cfg.s_max,
        schedule: strategy.schedule,
        init: strategy.init,
        lr: cfg.lr,
        momentum: cfg.momentum,
        lambda: cfg.lambda,
        epochs: cfg.cap,
        batch_size: cfg.batch_size,
        seed: shuffle_seed,
    })?;
    let mut completed = false;
    let metrics = trainer.fit(&mut net, &data, TaskId::new(0), cfg.cap, |net, b| {
        if gate_settled(net, cfg) {
            completed = true;
            ControlFlow::Break(())
        } else if b >= cfg.cap {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })?;
    Ok(ToyRun {
        repeat,
        strategy: strategy.name.clone(),
        batches: metrics.batches(),
        completed,
    })
}

fn jobs(strategies: &[Strategy], repeats: usize) -> Vec<(usize, &Strategy)> {
    (0..repeats).flat_map(|r| strategies.iter().map(move |s| (r, s))).collect()
}

/// Runs every (repeat, strategy) pair on the current thread. Repeat `r`
/// uses seed `base_seed + r`.
pub fn run_toy_sequential(cfg: &ToyConfig, strategies: &[Strategy], base_seed: u64, repeats: usize) -> Result<Vec<ToyRun>> {
    jobs(strategies, repeats)
        .into_iter()
        .map(|(r, s)| toy_repeat(cfg, s, r, base_seed + r as u64))
        .collect()
}

/// Same results as [`run_toy_sequential`], computed on the rayon pool.
#[cfg(feature = "parallel")]
pub fn run_toy_parallel(cfg: &ToyConfig, strategies: &[Strategy], base_seed: u64, repeats: usize) -> Result<Vec<ToyRun>> {
    use rayon::prelude::*;
    jobs(strategies, repeats)
        .into_par_iter()
        .map(|(r, s)| toy_repeat(cfg, s, r, base_seed + r as u64))
        .collect()
}

/// Parallel when the `parallel` feature is on, sequential otherwise.
pub fn run_toy(cfg: &ToyConfig, strategies: &[Strategy], base_seed: u64, repeats: usize) -> Result<Vec<ToyRun>> {
    #[cfg(feature = "parallel")]
    {
        run_toy_parallel(cfg, strategies, base_seed, repeats)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_toy_sequential(cfg, strategies, base_seed, repeats)
    }
}

/// Mean batch count per strategy, in the order strategies first appear.
pub fn mean_batches(runs: &[ToyRun]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64, usize)> = Vec::new();
    for r in runs {
        match out.iter_mut().find(|(n, _, _)| *n == r.strategy) {
            Some((_, sum, n)) => {
                *sum += r.batches as f64;
                *n += 1;
            }
            None => out.push((r.strategy.clone(), r.batches as f64, 1)),
        }
    }
    out.into_iter().map(|(n, s, c)| (n, s / c as f64)).collect()
}
