//! Two-stage stylized sampling model for studying sample-mean bias.
//!
//! 1. draw `n^d_i = round((1 - d) n*_i)` rewards from each arm;
//! 2. standardize: `Z^d_i = sqrt(n^d_i) (mean_i - mu_i)`;
//! 3. set `N~_2 = n*_2 (1 + 2 (Z^d_2 - Z^d_1 sqrt(lambda)) / ((1 + lambda^{3/2}) f(T)))`,
//!    rounded, and `N~_1 = T - N~_2`;
//! 4. draw the remaining `N~_i - n^d_i` rewards and pool.
//!
//! When step 3 asks for fewer pulls than step 1 already took, the count is
//! clamped to `n^d_i` and the replication is flagged.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{BanditInstance, ExplorationFunction, RewardStreams, StreamDomain};
use crate::error::{Error, Result};
use crate::fluid::solve_fluid;
use crate::numeric::round_half_even;
use crate::predict::LambdaSource;
use crate::stats::{BiasEstimate, Moments};

pub const MIN_REPLICATIONS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeltaRule {
    /// `d = min((ln T)^{-p}, 1/2)`; the cap only binds for small horizons.
    PowerOfLogInv { p: f64 },
    ExplicitValue { delta: f64 },
}

impl Default for DeltaRule {
    fn default() -> Self {
        DeltaRule::PowerOfLogInv { p: 0.25 }
    }
}

impl DeltaRule {
    pub fn delta(&self, horizon: u64) -> Result<f64> {
        let d = match *self {
            DeltaRule::PowerOfLogInv { p } => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::Domain(format!("delta exponent {p} outside (0, 1)")));
                }
                (horizon as f64).ln().powf(-p).min(0.5)
            }
            DeltaRule::ExplicitValue { delta } => delta,
        };
        if !(d > 0.0 && d <= 0.5) {
            return Err(Error::Domain(format!(
                "delta {d} at T = {horizon} outside (0, 1/2]"
            )));
        }
        Ok(d)
    }
}

#[derive(Debug, Clone)]
pub struct StylizedConfig {
    pub instance: BanditInstance,
    pub f: ExplorationFunction,
    pub horizon: u64,
    pub delta_rule: DeltaRule,
    pub lambda_source: LambdaSource,
    pub seed: u64,
}

impl StylizedConfig {
    pub fn new(instance: BanditInstance, f: ExplorationFunction, horizon: u64, seed: u64) -> Self {
        Self {
            instance,
            f,
            horizon,
            delta_rule: DeltaRule::default(),
            lambda_source: LambdaSource::Finite,
            seed,
        }
    }

    /// Deterministic quantities shared by every replication.
    pub fn plan(&self) -> Result<StylizedPlan> {
        if self.instance.arm_count() != 2 {
            return Err(Error::Unsupported(format!(
                "the stylized model is defined for two arms, got {}",
                self.instance.arm_count()
            )));
        }
        let report = crate::env::validate_instance(&self.instance);
        if !report.is_empty() {
            return Err(Error::InvalidInstance(report));
        }
        let delta = self.delta_rule.delta(self.horizon)?;
        let fluid = solve_fluid(&self.instance, &self.f, self.horizon)?;
        let lambda = self.lambda_source.resolve(&fluid)?;
        let n_delta = [0, 1].map(|i| (round_half_even((1.0 - delta) * fluid.n_star[i]) as u64).max(1));
        if n_delta[0] + n_delta[1] > self.horizon {
            return Err(Error::Domain("first-stage sample exceeds the horizon".to_owned()));
        }
        Ok(StylizedPlan {
            horizon: self.horizon,
            delta,
            f_t: fluid.f_t,
            lambda,
            n_star: [fluid.n_star[0], fluid.n_star[1]],
            n_delta,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StylizedPlan {
    pub horizon: u64,
    pub delta: f64,
    pub f_t: f64,
    pub lambda: f64,
    pub n_star: [f64; 2],
    pub n_delta: [u64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StylizedSample {
    pub replication: u64,
    pub mu_tilde: [f64; 2],
    pub n_tilde: [u64; 2],
    pub z_delta: [f64; 2],
    /// Means of the first-stage samples alone.
    pub first_stage_means: [f64; 2],
    pub clamped: bool,
}

impl StylizedPlan {
    /// Unrounded step-3 pull count of arm 2.
    pub fn n2_first_order(&self, z_delta: [f64; 2]) -> f64 {
        let l = self.lambda;
        let shift = 2.0 * (z_delta[1] - z_delta[0] * l.sqrt()) / ((1.0 + l.powf(1.5)) * self.f_t);
        self.n_star[1] * (1.0 + shift)
    }

    pub fn sample(&self, instance: &BanditInstance, seed: u64, replication: u64) -> StylizedSample {
        let mu = instance.means();
        let mut streams = RewardStreams::new(seed, replication, 2, StreamDomain::Stylized);
        let first = [0, 1].map(|i| instance.draw_sum(i, self.n_delta[i], streams.arm(i)));
        let first_stage_means = [0, 1].map(|i| first[i] / self.n_delta[i] as f64);
        let z_delta = [0, 1].map(|i| (self.n_delta[i] as f64).sqrt() * (first_stage_means[i] - mu[i]));

        let t = self.horizon;
        let raw = round_half_even(self.n2_first_order(z_delta));
        let lo = self.n_delta[1] as f64;
        let hi = (t - self.n_delta[0]) as f64;
        let clamped = !(raw >= lo && raw <= hi);
        let n2 = raw.clamp(lo, hi) as u64;
        let n_tilde = [t - n2, n2];

        let mu_tilde = [0, 1].map(|i| {
            let extra = n_tilde[i] - self.n_delta[i];
            let rest = if extra > 0 {
                instance.draw_sum(i, extra, streams.arm(i))
            } else {
                0.0
            };
            (first[i] + rest) / n_tilde[i] as f64
        });
        StylizedSample {
            replication,
            mu_tilde,
            n_tilde,
            z_delta,
            first_stage_means,
            clamped,
        }
    }
}

/// One replication of the stylized model.
pub fn stylized_sample(config: &StylizedConfig, replication: u64) -> Result<StylizedSample> {
    Ok(config.plan()?.sample(&config.instance, config.seed, replication))
}

/// Replications `0..count` in order; independent of `parallelism`.
pub fn stylized_ensemble(config: &StylizedConfig, count: u64, parallelism: usize) -> Result<Vec<StylizedSample>> {
    let plan = config.plan()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        (0..count)
            .into_par_iter()
            .map(|r| plan.sample(&config.instance, config.seed, r))
            .collect()
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylizedBiasReport {
    pub replications: u64,
    pub plan: StylizedPlan,
    /// `mean(mu~_i) - mu_i`.
    pub bias: Vec<BiasEstimate>,
    /// Bias of the first-stage means, which are unbiased by construction.
    pub first_stage_bias: Vec<BiasEstimate>,
    pub clamp_frequency: f64,
}

/// Summarizes an ensemble. Standard errors are delete-one jackknife, which
/// for a mean coincides with `sd / sqrt(n)`.
pub fn summarize(plan: &StylizedPlan, instance: &BanditInstance, samples: &[StylizedSample]) -> StylizedBiasReport {
    let mu = instance.means();
    let estimate = |arm: usize, pick: &dyn Fn(&StylizedSample) -> f64| {
        let m: Moments = samples.iter().map(|s| pick(s) - mu[arm]).collect();
        BiasEstimate {
            arm,
            bias: m.mean,
            se: m.mean_se(),
        }
    };
    let clamps = samples.iter().filter(|s| s.clamped).count();
    StylizedBiasReport {
        replications: samples.len() as u64,
        plan: *plan,
        bias: (0..2).map(|i| estimate(i, &|s| s.mu_tilde[i])).collect(),
        first_stage_bias: (0..2).map(|i| estimate(i, &|s| s.first_stage_means[i])).collect(),
        clamp_frequency: if samples.is_empty() {
            0.0
        } else {
            clamps as f64 / samples.len() as f64
        },
    }
}

pub fn stylized_bias_estimate(config: &StylizedConfig, replications: u64, parallelism: usize) -> Result<StylizedBiasReport> {
    if replications < MIN_REPLICATIONS {
        return Err(Error::Domain(format!(
            "at least {MIN_REPLICATIONS} replications required, got {replications}"
        )));
    }
    let plan = config.plan()?;
    let samples = stylized_ensemble(config, replications, parallelism)?;
    Ok(summarize(&plan, &config.instance, &samples))
}
