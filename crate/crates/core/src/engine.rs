//! Generalized UCB1 simulation.
//!
//! Epochs `1..=K` pull every arm once in index order. Afterwards epoch `t`
//! picks `argmax_i mean_i + f(t) / sqrt(N_i)` (ties to the lowest index).
//! In batched mode the chosen arm is pulled `min(b, T - t + 1)` times at
//! once with `b = max(1, floor(c T / ln T))`, the batch reward total drawn
//! in one shot, and the epoch counter advances by the batch length.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{validate_exploration, validate_instance, BanditInstance, ExplorationFunction, RewardStreams, StreamDomain};
use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

/// Largest horizon accepted; epochs must stay exact as `f64`.
pub const MAX_HORIZON: u64 = 1 << 53;

pub const DEFAULT_BATCH_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BatchTarget {
    #[default]
    AllArms,
    /// Only pulls of arm 1 are batched.
    SuperiorOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Batching {
    #[default]
    Exact,
    Batched {
        #[serde(default = "default_fraction")]
        fraction: f64,
        #[serde(default)]
        apply_to: BatchTarget,
    },
}

fn default_fraction() -> f64 {
    DEFAULT_BATCH_FRACTION
}

impl Batching {
    pub fn label(&self) -> &'static str {
        match self {
            Batching::Exact => "exact",
            Batching::Batched { .. } => "batched",
        }
    }
}

/// Epoch at which the exploration function is read when choosing `A_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExplorationEpoch {
    /// `f(t)`.
    #[default]
    Current,
    /// `f(t + 1)`.
    Next,
}

/// `max(1, floor(c T / ln T))`.
pub fn batch_size(horizon: u64, fraction: f64) -> u64 {
    let t = horizon as f64;
    if horizon < 2 {
        return 1;
    }
    ((fraction * t / t.ln()).floor() as u64).max(1)
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub instance: BanditInstance,
    pub f: ExplorationFunction,
    pub horizon: u64,
    pub batching: Batching,
    pub seed: u64,
    pub replication: u64,
    pub exploration_epoch: ExplorationEpoch,
    /// Epochs at which cumulative pull counts are recorded.
    pub checkpoints: Vec<u64>,
}

impl RunConfig {
    pub fn new(instance: BanditInstance, f: ExplorationFunction, horizon: u64, seed: u64) -> Self {
        Self {
            instance,
            f,
            horizon,
            batching: Batching::Exact,
            seed,
            replication: 0,
            exploration_epoch: ExplorationEpoch::Current,
            checkpoints: Vec::new(),
        }
    }

    pub fn with_batching(mut self, batching: Batching) -> Self {
        self.batching = batching;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let report = validate_instance(&self.instance);
        if !report.is_empty() {
            return Err(Error::InvalidInstance(report));
        }
        let k = self.instance.arm_count() as u64;
        if self.horizon < k {
            return Err(Error::Config(format!(
                "horizon {} smaller than arm count {k}",
                self.horizon
            )));
        }
        if self.horizon > MAX_HORIZON {
            return Err(Error::Config(format!(
                "horizon {} exceeds the supported maximum {MAX_HORIZON}",
                self.horizon
            )));
        }
        if let Batching::Batched { fraction, .. } = self.batching {
            if !(fraction > 0.0 && fraction.is_finite()) {
                return Err(Error::Config(format!("batch fraction {fraction} must be positive")));
            }
        }
        Ok(())
    }

    /// Batch length in pulls for this configuration (1 when exact).
    pub fn batch_len(&self) -> u64 {
        match self.batching {
            Batching::Exact => 1,
            Batching::Batched { fraction, .. } => batch_size(self.horizon, fraction),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: u64,
    pub pulls: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub replication: u64,
    pub seed: u64,
    pub horizon: u64,
    pub mode: String,
    pub pulls: Vec<u64>,
    pub sample_means: Vec<f64>,
    /// `sum_i Delta_i N_i`.
    pub pseudo_regret: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectory: Vec<Checkpoint>,
}

/// Lowest index among exact maximisers.
pub fn tie_break(indices: &[f64]) -> usize {
    assert!(!indices.is_empty(), "tie_break on empty index vector");
    let mut best = 0;
    for (i, &v) in indices.iter().enumerate().skip(1) {
        if v > indices[best] {
            best = i;
        }
    }
    best
}

struct ArmState {
    pulls: u64,
    sum: CompensatedSum,
    mean: f64,
    inv_sqrt_pulls: f64,
}

impl ArmState {
    #[inline]
    fn record(&mut self, count: u64, total: f64) {
        self.pulls += count;
        self.sum.add(total);
        self.mean = self.sum.value() / self.pulls as f64;
        self.inv_sqrt_pulls = 1.0 / (self.pulls as f64).sqrt();
    }
}

/// Runs one replication of generalized UCB1.
pub fn run_ucb(config: &RunConfig) -> Result<RunResult> {
    config.validate()?;
    let instance = &config.instance;
    let k = instance.arm_count();
    let horizon = config.horizon;
    let mut streams = RewardStreams::new(config.seed, config.replication, k, StreamDomain::Rewards);
    let mut arms: Vec<ArmState> = (0..k)
        .map(|_| ArmState {
            pulls: 0,
            sum: CompensatedSum::new(),
            mean: 0.0,
            inv_sqrt_pulls: 0.0,
        })
        .collect();

    let mut checkpoints: Vec<u64> = config.checkpoints.clone();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let mut next_checkpoint = 0;
    let mut trajectory = Vec::new();

    let (batch, target) = match config.batching {
        Batching::Exact => (1, BatchTarget::AllArms),
        Batching::Batched { fraction, apply_to } => (batch_size(horizon, fraction), apply_to),
    };
    let offset = match config.exploration_epoch {
        ExplorationEpoch::Current => 0.0,
        ExplorationEpoch::Next => 1.0,
    };

    let mut done: u64 = 0;
    for (arm, state) in arms.iter_mut().enumerate() {
        let x = instance.draw_sum(arm, 1, streams.arm(arm));
        state.record(1, x);
        done += 1;
    }

    let mut index = vec![0.0; k];
    loop {
        while next_checkpoint < checkpoints.len() && checkpoints[next_checkpoint] <= done {
            trajectory.push(Checkpoint {
                epoch: done,
                pulls: arms.iter().map(|a| a.pulls).collect(),
            });
            next_checkpoint += 1;
        }
        if done >= horizon {
            break;
        }
        let epoch = (done + 1) as f64 + offset;
        let bonus = config.f.value(epoch);
        for (slot, a) in index.iter_mut().zip(&arms) {
            *slot = a.mean + bonus * a.inv_sqrt_pulls;
        }
        let chosen = tie_break(&index);
        let batched = batch > 1 && (target == BatchTarget::AllArms || chosen == 0);
        let count = if batched { batch.min(horizon - done) } else { 1 };
        let total = instance.draw_sum(chosen, count, streams.arm(chosen));
        arms[chosen].record(count, total);
        done += count;
    }

    let gaps = instance.gaps();
    let pulls: Vec<u64> = arms.iter().map(|a| a.pulls).collect();
    let pseudo_regret = crate::numeric::compensated_sum(gaps.iter().zip(&pulls).map(|(d, &n)| d * n as f64));
    Ok(RunResult {
        replication: config.replication,
        seed: config.seed,
        horizon,
        mode: config.batching.label().to_owned(),
        sample_means: arms.iter().map(|a| a.mean).collect(),
        pulls,
        pseudo_regret,
        trajectory,
    })
}

/// Runs replications `template.replication .. template.replication + count`
/// on `parallelism` workers; output order and content do not depend on the
/// worker count.
pub fn run_ensemble(template: &RunConfig, replications: u64, parallelism: usize) -> Result<Vec<RunResult>> {
    template.validate()?;
    let report = validate_exploration(&template.f);
    if !report.is_empty() {
        return Err(Error::Config(format!("invalid exploration function: {}", report.join("; "))));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let base = template.replication;
    pool.install(|| {
        (0..replications)
            .into_par_iter()
            .map(|r| {
                let mut cfg = template.clone();
                cfg.replication = base + r;
                run_ucb(&cfg)
            })
            .collect()
    })
}
