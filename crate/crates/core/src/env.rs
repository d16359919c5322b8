//! Bandit environments, exploration functions and reward streams.
//!
//! Rewards for arm `i` in replication `r` come from a dedicated ChaCha8
//! stream keyed by `(master_seed, arm, domain)` with stream id `r`, so the
//! sequence of rewards an arm reveals does not depend on when (or on which
//! worker) it is pulled. Normals use the ziggurat sampler of `rand_distr`
//! 0.5.1 and Bernoulli batches its BTPE/inversion binomial sampler; the
//! version is pinned exactly in the manifest.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardFamily {
    Gaussian,
    Bernoulli,
}

impl fmt::Display for RewardFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewardFamily::Gaussian => f.write_str("gaussian"),
            RewardFamily::Bernoulli => f.write_str("bernoulli"),
        }
    }
}

/// A stochastic bandit with arms sorted so that arm 0 is the best.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditInstance {
    means: Vec<f64>,
    std_devs: Vec<f64>,
    family: RewardFamily,
    sigma_bound: f64,
}

impl BanditInstance {
    /// Builds an instance without checking it; see [`validate_instance`].
    pub fn new(family: RewardFamily, means: Vec<f64>, std_devs: Vec<f64>, sigma_bound: Option<f64>) -> Self {
        let sigma_bound = sigma_bound.unwrap_or_else(|| std_devs.iter().copied().fold(0.0, f64::max));
        Self {
            means,
            std_devs,
            family,
            sigma_bound,
        }
    }

    pub fn gaussian(means: Vec<f64>, std_devs: Vec<f64>) -> Result<Self> {
        Self::new(RewardFamily::Gaussian, means, std_devs, None).checked()
    }

    /// Bernoulli arms; the standard deviations are derived from the means.
    pub fn bernoulli(means: Vec<f64>) -> Result<Self> {
        let std_devs = means.iter().map(|&p| bernoulli_sd(p)).collect();
        Self::new(RewardFamily::Bernoulli, means, std_devs, None).checked()
    }

    pub fn checked(self) -> Result<Self> {
        let report = validate_instance(&self);
        if report.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidInstance(report))
        }
    }

    pub fn arm_count(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn std_devs(&self) -> &[f64] {
        &self.std_devs
    }

    pub fn variances(&self) -> Vec<f64> {
        self.std_devs.iter().map(|s| s * s).collect()
    }

    pub fn family(&self) -> RewardFamily {
        self.family
    }

    pub fn sigma_bound(&self) -> f64 {
        self.sigma_bound
    }

    /// Gaps `mu_1 - mu_i`; the first entry is always zero.
    pub fn gaps(&self) -> Vec<f64> {
        let best = self.means.first().copied().unwrap_or(0.0);
        self.means.iter().map(|m| best - m).collect()
    }

    pub fn gap(&self, arm: usize) -> f64 {
        self.means[0] - self.means[arm]
    }

    /// Reward draw helper: one sum of `count` rewards from `arm`.
    #[inline]
    pub fn draw_sum(&self, arm: usize, count: u64, rng: &mut ChaCha8Rng) -> f64 {
        debug_assert!(count >= 1);
        match self.family {
            RewardFamily::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                let m = count as f64;
                if count == 1 {
                    self.means[arm] + self.std_devs[arm] * z
                } else {
                    m * self.means[arm] + self.std_devs[arm] * m.sqrt() * z
                }
            }
            RewardFamily::Bernoulli => {
                let p = self.means[arm].clamp(0.0, 1.0);
                Binomial::new(count, p)
                    .expect("probability clamped to [0, 1]")
                    .sample(rng) as f64
            }
        }
    }
}

pub(crate) fn bernoulli_sd(p: f64) -> f64 {
    (p * (1.0 - p)).max(0.0).sqrt()
}

/// Lists every violated invariant; an empty report means the instance is valid.
pub fn validate_instance(instance: &BanditInstance) -> Vec<String> {
    let mut report = Vec::new();
    let k = instance.means.len();
    if k < 2 {
        report.push(format!("arm count {k} < 2"));
    }
    if instance.std_devs.len() != k {
        report.push(format!(
            "{} standard deviations for {k} means",
            instance.std_devs.len()
        ));
    }
    if instance.means.iter().any(|m| !m.is_finite()) {
        report.push("means not finite".to_owned());
    }
    if instance.means.windows(2).any(|w| w[0] < w[1]) {
        report.push("means not sorted".to_owned());
    }
    for (i, &s) in instance.std_devs.iter().enumerate() {
        if !(s.is_finite() && s >= 0.0) {
            report.push(format!("std_dev of arm {} is not a finite non-negative number", i + 1));
        } else if s > instance.sigma_bound {
            report.push(format!(
                "std_dev {s} of arm {} exceeds declared bound {}",
                i + 1,
                instance.sigma_bound
            ));
        }
    }
    if instance.family == RewardFamily::Bernoulli {
        for (i, &p) in instance.means.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                report.push(format!("Bernoulli mean {p} of arm {} outside [0, 1]", i + 1));
            } else if let Some(&s) = instance.std_devs.get(i) {
                if (s - bernoulli_sd(p)).abs() > 1e-12 {
                    report.push(format!(
                        "Bernoulli std_dev of arm {} must equal sqrt(mu(1-mu)) = {}",
                        i + 1,
                        bernoulli_sd(p)
                    ));
                }
            }
        }
    }
    report
}

/// How the exploration bonus numerator `f(t)` is computed.
#[derive(Clone)]
pub enum ExplorationKind {
    /// Canonical UCB, `f(t) = sqrt(rho * ln t)`; UCB1 is `rho = 2`.
    SqrtRhoLog { rho: f64 },
    /// `f(t) = scale * (ln t)^power`.
    LogPower { scale: f64, power: f64 },
    /// Piecewise linear in `ln t` through `(t, f)` knots, linear
    /// extrapolation past the last knot.
    Tabulated { points: Vec<(f64, f64)> },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for ExplorationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SqrtRhoLog { rho } => f.debug_struct("SqrtRhoLog").field("rho", rho).finish(),
            Self::LogPower { scale, power } => f
                .debug_struct("LogPower")
                .field("scale", scale)
                .field("power", power)
                .finish(),
            Self::Tabulated { points } => f.debug_struct("Tabulated").field("points", &points.len()).finish(),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Exploration function together with its declared growth index `beta`.
#[derive(Debug, Clone)]
pub struct ExplorationFunction {
    pub kind: ExplorationKind,
    pub beta: f64,
}

/// Growth index declared for the canonical family when none is given.
pub const DEFAULT_SQRT_LOG_BETA: f64 = 0.45;

impl ExplorationFunction {
    pub fn sqrt_rho_log(rho: f64) -> Self {
        Self {
            kind: ExplorationKind::SqrtRhoLog { rho },
            beta: DEFAULT_SQRT_LOG_BETA,
        }
    }

    pub fn ucb1() -> Self {
        Self::sqrt_rho_log(2.0)
    }

    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static, beta: f64) -> Self {
        Self {
            kind: ExplorationKind::Custom(Arc::new(f)),
            beta,
        }
    }

    /// `rho` of the canonical family, if this is one.
    pub fn rho(&self) -> Option<f64> {
        match self.kind {
            ExplorationKind::SqrtRhoLog { rho } => Some(rho),
            _ => None,
        }
    }

    /// Unchecked evaluation at real `t`.
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        match &self.kind {
            ExplorationKind::SqrtRhoLog { rho } => (rho * t.ln()).sqrt(),
            ExplorationKind::LogPower { scale, power } => scale * t.ln().powf(*power),
            ExplorationKind::Tabulated { points } => interpolate_log(points, t),
            ExplorationKind::Custom(f) => f(t),
        }
    }

    pub fn eval(&self, t: u64) -> Result<f64> {
        eval_f(self, t)
    }
}

fn interpolate_log(points: &[(f64, f64)], t: f64) -> f64 {
    match points.len() {
        0 => f64::NAN,
        1 => points[0].1,
        n => {
            let lt = t.ln();
            let seg = points
                .windows(2)
                .position(|w| t <= w[1].0)
                .unwrap_or(n - 2);
            let (t0, f0) = points[seg];
            let (t1, f1) = points[seg + 1];
            let (l0, l1) = (t0.ln(), t1.ln());
            f0 + (f1 - f0) * (lt - l0) / (l1 - l0)
        }
    }
}

/// `f(t)` for integer `t >= 2`.
pub fn eval_f(f: &ExplorationFunction, t: u64) -> Result<f64> {
    if t < 2 {
        return Err(Error::Domain(format!("exploration function evaluated at t = {t} < 2")));
    }
    Ok(f.value(t as f64))
}

/// Sampled grid used to check the monotonicity conditions on `f`.
pub fn exploration_grid() -> Vec<u64> {
    let mut grid: Vec<u64> = (2..=10_000).collect();
    let mut t = 10_000.0_f64;
    while t < 1e6 {
        t *= 1.002;
        let ti = (t.round() as u64).min(1_000_000);
        if ti > *grid.last().unwrap() {
            grid.push(ti);
        }
    }
    if *grid.last().unwrap() != 1_000_000 {
        grid.push(1_000_000);
    }
    grid
}

/// Grid checks for the exploration function: `0 <= beta < 1/2`, `f > 0`,
/// `f` non-decreasing on `t >= 2` and `f(t)/t^beta` non-increasing on
/// `t >= 3`.
pub fn validate_exploration(f: &ExplorationFunction) -> Vec<String> {
    let mut report = Vec::new();
    if !(0.0..0.5).contains(&f.beta) {
        report.push(format!("beta = {} outside [0, 1/2)", f.beta));
    }
    if let ExplorationKind::SqrtRhoLog { rho } = f.kind {
        if !(rho > 0.0 && rho.is_finite()) {
            report.push(format!("rho = {rho} must be positive"));
            return report;
        }
    }
    let grid = exploration_grid();
    let values: Vec<f64> = grid.iter().map(|&t| f.value(t as f64)).collect();
    if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        report.push(format!("f({}) = {} is not positive", grid[i], values[i]));
        return report;
    }
    if let Some(i) = (1..grid.len()).find(|&i| values[i] < values[i - 1]) {
        report.push(format!("f not monotone increasing: f({}) < f({})", grid[i], grid[i - 1]));
    }
    let ratio = |i: usize| values[i] / (grid[i] as f64).powf(f.beta);
    if let Some(i) = (2..grid.len()).find(|&i| ratio(i) > ratio(i - 1) * (1.0 + 1e-12)) {
        report.push(format!(
            "f(t)/t^beta increases between t = {} and t = {}",
            grid[i - 1],
            grid[i]
        ));
    }
    report
}

/// How the arm-2 gap scales with the horizon in experiment sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum GapSpec {
    /// A horizon-independent gap.
    FixedGap { delta: f64 },
    /// `Delta_T = theta * f(T) / sqrt(T)`.
    ModerateTheta { theta: f64 },
    /// Identical arms.
    SmallGapZero,
    /// The gap for which the fluid solution puts exactly `share * T` pulls
    /// on the best arm: `Delta_T = f(T) (((1-share) T)^{-1/2} - (share T)^{-1/2})`.
    TargetShare { share: f64 },
}

impl GapSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GapSpec::FixedGap { delta } if !(delta >= 0.0 && delta.is_finite()) => {
                Err(Error::Domain(format!("gap {delta} must be finite and non-negative")))
            }
            GapSpec::ModerateTheta { theta } if !(theta >= 0.0 && theta.is_finite()) => {
                Err(Error::Domain(format!("theta {theta} must be finite and non-negative")))
            }
            GapSpec::TargetShare { share } if !(0.5..1.0).contains(&share) => {
                Err(Error::Domain(format!("target share {share} outside [1/2, 1)")))
            }
            _ => Ok(()),
        }
    }

    /// `Delta_T` at horizon `T` under exploration function `f`.
    pub fn gap_at(&self, f: &ExplorationFunction, horizon: u64) -> Result<f64> {
        self.validate()?;
        let t = horizon as f64;
        Ok(match *self {
            GapSpec::FixedGap { delta } => delta,
            GapSpec::ModerateTheta { theta } => theta * eval_f(f, horizon)? / t.sqrt(),
            GapSpec::SmallGapZero => 0.0,
            GapSpec::TargetShare { share } => {
                eval_f(f, horizon)? * (((1.0 - share) * t).powf(-0.5) - (share * t).powf(-0.5))
            }
        })
    }

    /// A two-arm instance whose arm-2 mean is `mu_2` and whose best arm sits
    /// `Delta_T` above it.
    pub fn two_arm_instance(
        &self,
        f: &ExplorationFunction,
        horizon: u64,
        mu_2: f64,
        std_devs: [f64; 2],
        family: RewardFamily,
    ) -> Result<BanditInstance> {
        let delta = self.gap_at(f, horizon)?;
        let means = vec![mu_2 + delta, mu_2];
        let std_devs = match family {
            RewardFamily::Gaussian => std_devs.to_vec(),
            RewardFamily::Bernoulli => means.iter().map(|&p| bernoulli_sd(p)).collect(),
        };
        BanditInstance::new(family, means, std_devs, None).checked()
    }
}

/// Domain tags separating the random streams of different consumers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamDomain {
    Rewards = 0,
    Stylized = 1,
    MonteCarlo = 2,
    Synthetic = 3,
}

/// Independent counter-based stream for `(seed, replication, arm, domain)`.
pub fn stream_rng(seed: u64, replication: u64, arm: usize, domain: StreamDomain) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(arm as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(domain as u64).to_le_bytes());
    key[24..32].copy_from_slice(b"bndtflw1");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(replication);
    rng
}

/// One reward stream per arm for a single replication.
#[derive(Debug, Clone)]
pub struct RewardStreams {
    rngs: Vec<ChaCha8Rng>,
}

impl RewardStreams {
    pub fn new(seed: u64, replication: u64, arms: usize, domain: StreamDomain) -> Self {
        Self {
            rngs: (0..arms).map(|a| stream_rng(seed, replication, a, domain)).collect(),
        }
    }

    #[inline]
    pub fn arm(&mut self, arm: usize) -> &mut ChaCha8Rng {
        &mut self.rngs[arm]
    }
}

/// Sufficient statistics of a batch of rewards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBatch {
    pub sum: f64,
    pub sum_sq: f64,
}

/// Draws `count` rewards from `arm` as one batch.
///
/// Gaussian batches draw the total as a single normal and the sum of
/// squares from the independent chi-square of the within-batch spread, so
/// both statistics have their exact joint law.
pub fn sample_reward(
    instance: &BanditInstance,
    arm: usize,
    count: u64,
    streams: &mut RewardStreams,
) -> Result<RewardBatch> {
    if arm >= instance.arm_count() {
        return Err(Error::ArmIndex {
            index: arm,
            arms: instance.arm_count(),
        });
    }
    if count == 0 {
        return Err(Error::Domain("reward batch of size 0".to_owned()));
    }
    let rng = streams.arm(arm);
    let sum = instance.draw_sum(arm, count, rng);
    let sum_sq = match instance.family {
        RewardFamily::Bernoulli => sum,
        RewardFamily::Gaussian if count == 1 => sum * sum,
        RewardFamily::Gaussian => {
            let sigma = instance.std_devs[arm];
            let spread: f64 = ChiSquared::new((count - 1) as f64)
                .expect("positive degrees of freedom")
                .sample(rng);
            sum * sum / count as f64 + sigma * sigma * spread
        }
    };
    Ok(RewardBatch { sum, sum_sq })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_gaussian_arms_are_valid() {
        let inst = BanditInstance::new(RewardFamily::Gaussian, vec![1.0, 1.0], vec![1.0, 1.0], None);
        assert!(validate_instance(&inst).is_empty());
    }

    #[test]
    fn unsorted_means_are_reported() {
        let inst = BanditInstance::new(RewardFamily::Gaussian, vec![0.0, 1.0], vec![1.0, 1.0], None);
        let report = validate_instance(&inst);
        assert_eq!(report, vec!["means not sorted".to_owned()]);
        // pure: repeated validation gives the same report and leaves the input alone
        assert_eq!(validate_instance(&inst), report);
        assert_eq!(inst.means(), &[0.0, 1.0]);
    }

    #[test]
    fn bernoulli_derives_std_devs() {
        let inst = BanditInstance::bernoulli(vec![0.5, 0.5]).unwrap();
        assert_eq!(inst.std_devs(), &[0.5, 0.5]);
        let wrong = BanditInstance::new(RewardFamily::Bernoulli, vec![0.5, 0.5], vec![1.0, 0.5], Some(1.0));
        assert_eq!(validate_instance(&wrong).len(), 1);
        let outside = BanditInstance::new(RewardFamily::Bernoulli, vec![1.5, 0.5], vec![0.0, 0.5], None);
        assert!(!validate_instance(&outside).is_empty());
    }

    #[test]
    fn sigma_bound_and_arm_count() {
        let inst = BanditInstance::new(RewardFamily::Gaussian, vec![1.0, 0.0], vec![1.0, 2.0], Some(1.5));
        assert_eq!(validate_instance(&inst).len(), 1);
        let one = BanditInstance::new(RewardFamily::Gaussian, vec![1.0], vec![1.0], None);
        assert!(!validate_instance(&one).is_empty());
    }

    #[test]
    fn eval_f_values() {
        let f = ExplorationFunction::sqrt_rho_log(2.0);
        let at_e2 = f.value(std::f64::consts::E.powi(2));
        assert!((at_e2 - 2.0).abs() < 1e-15);
        let v = eval_f(&f, 100_000).unwrap();
        assert!((v - 4.798_525_912).abs() < 1e-8, "{v}");
        assert!(matches!(eval_f(&f, 1), Err(Error::Domain(_))));
        for t in 2..5000 {
            assert!(eval_f(&f, t + 1).unwrap() >= eval_f(&f, t).unwrap());
        }
    }

    #[test]
    fn canonical_exploration_passes_grid_checks() {
        assert!(validate_exploration(&ExplorationFunction::ucb1()).is_empty());
        let mut too_fast = ExplorationFunction::ucb1();
        too_fast.beta = 0.0;
        assert_eq!(validate_exploration(&too_fast).len(), 1);
        let decreasing = ExplorationFunction::custom(|t| 1.0 / t, 0.2);
        assert!(!validate_exploration(&decreasing).is_empty());
        let bad_beta = ExplorationFunction {
            kind: ExplorationKind::SqrtRhoLog { rho: 2.0 },
            beta: 0.5,
        };
        assert!(!validate_exploration(&bad_beta).is_empty());
    }

    #[test]
    fn tabulated_interpolates_in_log_time() {
        let f = ExplorationFunction {
            kind: ExplorationKind::Tabulated {
                points: vec![(2.0, 1.0), (200.0, 3.0)],
            },
            beta: 0.4,
        };
        assert!((f.value(20.0) - 2.0).abs() < 1e-12);
        assert!((f.value(2000.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn gap_specs() {
        let f = ExplorationFunction::ucb1();
        let t = 1_000_000u64;
        assert_eq!(GapSpec::SmallGapZero.gap_at(&f, t).unwrap(), 0.0);
        let g = GapSpec::ModerateTheta { theta: 1.5 }.gap_at(&f, t).unwrap();
        assert!((g - 1.5 * f.value(1e6) / 1e3).abs() < 1e-15);
        assert!(GapSpec::ModerateTheta { theta: -1.0 }.gap_at(&f, t).is_err());
        assert!(GapSpec::TargetShare { share: 0.3 }.validate().is_err());
        let inst = GapSpec::FixedGap { delta: 2.0 }
            .two_arm_instance(&f, t, 0.0, [1.0, 1.0], RewardFamily::Gaussian)
            .unwrap();
        assert_eq!(inst.means(), &[2.0, 0.0]);
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let inst = BanditInstance::gaussian(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let mut a = RewardStreams::new(7, 3, 2, StreamDomain::Rewards);
        let mut b = RewardStreams::new(7, 3, 2, StreamDomain::Rewards);
        let x = sample_reward(&inst, 0, 1, &mut a).unwrap();
        let y = sample_reward(&inst, 0, 1, &mut b).unwrap();
        assert_eq!(x.sum.to_bits(), y.sum.to_bits());
        let other_arm = sample_reward(&inst, 1, 1, &mut b).unwrap();
        assert_ne!(x.sum, other_arm.sum);
        let mut c = RewardStreams::new(7, 4, 2, StreamDomain::Rewards);
        assert_ne!(sample_reward(&inst, 0, 1, &mut c).unwrap().sum, x.sum);
        assert!(matches!(
            sample_reward(&inst, 2, 1, &mut a),
            Err(Error::ArmIndex { index: 2, arms: 2 })
        ));
    }

    #[test]
    fn bernoulli_batch_support() {
        let inst = BanditInstance::bernoulli(vec![0.5, 0.5]).unwrap();
        let mut s = RewardStreams::new(1, 0, 2, StreamDomain::Rewards);
        for _ in 0..200 {
            let b = sample_reward(&inst, 0, 4, &mut s).unwrap();
            assert!(b.sum >= 0.0 && b.sum <= 4.0 && b.sum.fract() == 0.0);
            assert_eq!(b.sum, b.sum_sq);
        }
    }

    #[test]
    fn large_gaussian_batch_obeys_lln() {
        let inst = BanditInstance::gaussian(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let mut s = RewardStreams::new(11, 0, 2, StreamDomain::Rewards);
        for _ in 0..100 {
            let b = sample_reward(&inst, 0, 1_000_000, &mut s).unwrap();
            assert!((b.sum / 1e6 - 1.0).abs() < 5e-3);
        }
    }
}
