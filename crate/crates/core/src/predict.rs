//! Closed-form asymptotic predictions for generalized UCB1: joint-CLT
//! covariances, pseudo-regret scale and deviation, and leading sample-bias
//! terms.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{stream_rng, BanditInstance, ExplorationFunction, StreamDomain};
use crate::error::{Error, Result};
use crate::fluid::{FluidSolution, GapRegime};
use crate::numeric::Matrix;
use crate::perturb::ucb_omega_into;
use crate::stats::CovAccumulator;

/// Where the two-arm sampling ratio `lambda*` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSource {
    /// `n_2/n_1` of the finite-T fluid solution.
    #[default]
    Finite,
    /// An asymptotic value supplied by the caller.
    Limit(f64),
}

impl LambdaSource {
    pub fn resolve(&self, fluid: &FluidSolution) -> Result<f64> {
        match *self {
            LambdaSource::Finite => Ok(fluid.lambda_21()),
            LambdaSource::Limit(l) if (0.0..=1.0).contains(&l) => Ok(l),
            LambdaSource::Limit(l) => Err(Error::Domain(format!("lambda* = {l} outside [0, 1]"))),
        }
    }
}

/// One standardized coordinate of the joint CLT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "arm", rename_all = "snake_case")]
pub enum Coord {
    /// `W_i`, scaled pull-count deviation of arm `i` (0-based).
    Pulls(usize),
    /// `Z_i`, scaled sample-mean deviation of arm `i` (0-based).
    Mean(usize),
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coord::Pulls(i) => write!(f, "W_{}", i + 1),
            Coord::Mean(i) => write!(f, "Z_{}", i + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltPrediction {
    pub horizon: u64,
    pub f_t: f64,
    pub coords: Vec<Coord>,
    /// Multiplier applied to `N_i - n_i` for each `Pulls` coordinate, in
    /// coordinate order.
    pub w_scale: Vec<f64>,
    /// `sqrt(n_i)` per arm.
    pub z_scale: Vec<f64>,
    pub cov: Matrix,
    /// Two-arm `lambda*` used, if this is the two-arm form.
    pub lambda: Option<f64>,
}

impl CltPrediction {
    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn labels(&self) -> Vec<String> {
        self.coords.iter().map(ToString::to_string).collect()
    }

    /// Scale of coordinate `c`.
    pub fn scale(&self, c: usize) -> f64 {
        match self.coords[c] {
            Coord::Pulls(_) => {
                let pos = self.coords[..c]
                    .iter()
                    .filter(|x| matches!(x, Coord::Pulls(_)))
                    .count();
                self.w_scale[pos]
            }
            Coord::Mean(i) => self.z_scale[i],
        }
    }

    /// Covariance of the raw deviations `(N_i - n_i, mean_i - mu_i)`.
    pub fn raw_covariance(&self) -> Matrix {
        let d = self.dim();
        let mut out = Matrix::zeros(d, d);
        for a in 0..d {
            for b in 0..d {
                out.set(a, b, self.cov.get(a, b) / (self.scale(a) * self.scale(b)));
            }
        }
        out
    }
}

fn two_arm_check(fluid: &FluidSolution, instance: &BanditInstance) -> Result<()> {
    if fluid.arm_count() != 2 || instance.arm_count() != 2 {
        return Err(Error::Unsupported(format!(
            "two-arm prediction requested for {} arms",
            fluid.arm_count()
        )));
    }
    Ok(())
}

/// Two-arm joint CLT for `(W_2, Z_1, Z_2)` with
/// `W_2 = (1 + lambda^{3/2})/2 * f(T)/n_2 * (N_2 - n_2)`.
pub fn clt_two_arm(
    fluid: &FluidSolution,
    instance: &BanditInstance,
    f_t: f64,
    lambda_source: LambdaSource,
) -> Result<CltPrediction> {
    two_arm_check(fluid, instance)?;
    let lambda = lambda_source.resolve(fluid)?;
    let v = instance.variances();
    let (s1, s2) = (v[0], v[1]);
    let sl = lambda.sqrt();
    let cov = Matrix::from_rows(&[
        vec![lambda * s1 + s2, -s1 * sl, s2],
        vec![-s1 * sl, s1, 0.0],
        vec![s2, 0.0, s2],
    ]);
    let n2 = fluid.n_star[1];
    Ok(CltPrediction {
        horizon: fluid.horizon,
        f_t,
        coords: vec![Coord::Pulls(1), Coord::Mean(0), Coord::Mean(1)],
        w_scale: vec![(1.0 + lambda.powf(1.5)) / 2.0 * f_t / n2],
        z_scale: fluid.n_star.iter().map(|n| n.sqrt()).collect(),
        cov,
        lambda: Some(lambda),
    })
}

/// K-arm joint CLT for `(W_1..W_K, Z_1..Z_K)` with
/// `W_i = f(T)/(2 n_{max(i,2)}) (N_i - n_i)`, using the finite-T ratios
/// `lambda_ij = n_i/n_j` of `fluid`.
pub fn clt_k_arm(fluid: &FluidSolution, instance: &BanditInstance, f_t: f64) -> Result<CltPrediction> {
    let k = fluid.arm_count();
    if instance.arm_count() != k {
        return Err(Error::Dimension {
            expected: k,
            found: instance.arm_count(),
        });
    }
    if k < 2 {
        return Err(Error::Domain("need at least two arms".to_owned()));
    }
    let lam = &fluid.lambda;
    let var = instance.variances();
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };

    let denom = 1.0 + (1..k).map(|q| lam[q][0].powf(1.5)).sum::<f64>();
    let lead = (1..k).map(|q| lam[q][1] * lam[q][0].sqrt()).sum::<f64>() / denom;
    // Coefficient of Z_l in W_i for inferior arms i.
    let mix = |l: usize, i: usize| delta(l, i) - lam[l][0] * lam[i][0].sqrt() / denom;

    let mut w_block = Matrix::zeros(k, k);
    let mut cross = Matrix::zeros(k, k);

    cross.set(0, 0, lead * var[0]);
    for i in 1..k {
        cross.set(0, i, -lam[i][1] / denom * var[i]);
    }
    for i in 1..k {
        for j in 0..k {
            cross.set(i, j, mix(j, i) * var[j]);
        }
    }

    let w11 = lead * lead * var[0] + (1..k).map(|l| (lam[l][1] / denom).powi(2) * var[l]).sum::<f64>();
    w_block.set(0, 0, w11);
    for i in 1..k {
        let v = -lam[i][0].sqrt() * lead / denom * var[0]
            - (1..k).map(|l| lam[l][1] / denom * mix(l, i) * var[l]).sum::<f64>();
        w_block.set(0, i, v);
        w_block.set(i, 0, v);
    }
    for i in 1..k {
        for j in 1..k {
            let v: f64 = (0..k).map(|l| mix(l, i) * mix(l, j) * var[l]).sum();
            w_block.set(i, j, v);
        }
    }

    let mut cov = Matrix::zeros(2 * k, 2 * k);
    for a in 0..k {
        for b in 0..k {
            cov.set(a, b, w_block.get(a, b));
            cov.set(a, k + b, cross.get(a, b));
            cov.set(k + b, a, cross.get(a, b));
        }
        cov.set(k + a, k + a, var[a]);
    }

    let n = &fluid.n_star;
    let mut coords: Vec<Coord> = (0..k).map(Coord::Pulls).collect();
    coords.extend((0..k).map(Coord::Mean));
    Ok(CltPrediction {
        horizon: fluid.horizon,
        f_t,
        coords,
        w_scale: (0..k).map(|i| f_t / (2.0 * n[i.max(1)])).collect(),
        z_scale: n.iter().map(|x| x.sqrt()).collect(),
        cov,
        lambda: None,
    })
}

/// Shards used by the Monte-Carlo covariance oracle; fixed so the result
/// does not depend on the worker count.
pub const MC_SHARDS: usize = 64;

/// Monte-Carlo estimate of the K-arm covariance: independent
/// `Z_k ~ N(0, sigma_k^2)` are pushed through the UCB perturbation solution
/// with `eps_k = Z_k / sqrt(n_k)` and standardized like [`clt_k_arm`].
pub fn clt_from_perturbation_mc(
    fluid: &FluidSolution,
    instance: &BanditInstance,
    f_t: f64,
    samples: usize,
    seed: u64,
) -> Result<Matrix> {
    let k = fluid.arm_count();
    if instance.arm_count() != k {
        return Err(Error::Dimension {
            expected: k,
            found: instance.arm_count(),
        });
    }
    if samples < 2 {
        return Err(Error::Domain(format!("{samples} Monte-Carlo samples")));
    }
    let sd = instance.std_devs().to_vec();
    let n = fluid.n_star.clone();
    let w_scale: Vec<f64> = (0..k).map(|i| f_t / (2.0 * n[i.max(1)])).collect();

    let partials: Vec<CovAccumulator> = (0..MC_SHARDS)
        .into_par_iter()
        .map(|shard| {
            let count = samples / MC_SHARDS + usize::from(shard < samples % MC_SHARDS);
            let mut rng = stream_rng(seed, shard as u64, 0, StreamDomain::MonteCarlo);
            let mut acc = CovAccumulator::new(2 * k);
            let mut z = vec![0.0; k];
            let mut eps = vec![0.0; k];
            let mut omega = vec![0.0; k];
            let mut row = vec![0.0; 2 * k];
            for _ in 0..count {
                for i in 0..k {
                    let g: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                    z[i] = sd[i] * g;
                    eps[i] = z[i] / n[i].sqrt();
                }
                ucb_omega_into(&n, f_t, &eps, &mut omega);
                for i in 0..k {
                    row[i] = w_scale[i] * omega[i];
                    row[k + i] = z[i];
                }
                acc.push(&row);
            }
            acc
        })
        .collect();
    let mut total = CovAccumulator::new(2 * k);
    for p in &partials {
        total.merge(p);
    }
    Ok(total.covariance())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretPrediction {
    pub horizon: u64,
    pub lambda: f64,
    /// `R* = n_2 Delta`.
    pub typical_scale: f64,
    /// `sqrt(2(lambda s1^2 + s2^2)) / sqrt(1 + lambda^{3/2}) * R*/f(T)`.
    pub typical_deviation: f64,
    /// Standard deviation implied by the regret CLT,
    /// `2 sqrt(lambda s1^2 + s2^2)/(1 + lambda^{3/2}) * R*/f(T)`.
    pub clt_implied_sd: f64,
}

pub fn regret_prediction(
    fluid: &FluidSolution,
    instance: &BanditInstance,
    f_t: f64,
    lambda_source: LambdaSource,
) -> Result<RegretPrediction> {
    two_arm_check(fluid, instance)?;
    let delta = instance.gap(1);
    if delta < 0.0 {
        return Err(Error::Domain(format!("negative gap {delta}")));
    }
    let lambda = lambda_source.resolve(fluid)?;
    let v = instance.variances();
    let spread = lambda * v[0] + v[1];
    let share = 1.0 + lambda.powf(1.5);
    let typical_scale = fluid.n_star[1] * delta;
    Ok(RegretPrediction {
        horizon: fluid.horizon,
        lambda,
        typical_scale,
        typical_deviation: (2.0 * spread).sqrt() / share.sqrt() * typical_scale / f_t,
        clt_implied_sd: 2.0 * spread.sqrt() / share * typical_scale / f_t,
    })
}

/// Multiplier that turns a bias into its figure-comparison constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasScaling {
    /// `sqrt(T ln T)`.
    SqrtTLogT,
    /// `ln T`.
    LogT,
}

impl BiasScaling {
    pub fn factor(&self, horizon: u64) -> f64 {
        let t = horizon as f64;
        match self {
            BiasScaling::SqrtTLogT => (t * t.ln()).sqrt(),
            BiasScaling::LogT => t.ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmBias {
    pub arm: usize,
    /// Leading-order `E[mean_i] - mu_i`.
    pub leading_bias: f64,
    /// The bias multiplied by `scaling`, when the regime defines one.
    pub scaled_constant: Option<f64>,
    pub scaling: Option<BiasScaling>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasPrediction {
    pub horizon: u64,
    pub rho: f64,
    pub lambda: f64,
    pub regime: GapRegime,
    pub arms: Vec<ArmBias>,
}

/// Leading sample-bias terms under canonical UCB, `f(t) = sqrt(rho ln t)`.
///
/// Small and moderate gaps use
/// `-2 s2^2 / ((1 + lambda^{3/2}) sqrt(rho n_2 ln T))` for arm 2 and
/// `-2 s1^2 / ((1 + lambda^{-3/2}) sqrt(rho n_1 ln T))` for arm 1, scaled by
/// `sqrt(T ln T)`. A large gap uses `-2 s2^2 Delta / (rho ln T)` for arm 2,
/// scaled by `ln T`, and no constant for arm 1.
pub fn bias_prediction(
    fluid: &FluidSolution,
    instance: &BanditInstance,
    f: &ExplorationFunction,
    lambda_source: LambdaSource,
) -> Result<BiasPrediction> {
    two_arm_check(fluid, instance)?;
    let rho = f
        .rho()
        .ok_or_else(|| Error::Unsupported("bias prediction needs f(t) = sqrt(rho ln t)".to_owned()))?;
    let lambda = lambda_source.resolve(fluid)?;
    let horizon = fluid.horizon;
    let log_t = (horizon as f64).ln();
    let v = instance.variances();
    let regime = fluid.regime[0];
    let arms = match regime {
        GapRegime::LargeGap => {
            let delta = instance.gap(1);
            let scaled = -2.0 * v[1] * delta / rho;
            vec![
                ArmBias {
                    arm: 0,
                    leading_bias: 0.0,
                    scaled_constant: None,
                    scaling: None,
                },
                ArmBias {
                    arm: 1,
                    leading_bias: scaled / log_t,
                    scaled_constant: Some(scaled),
                    scaling: Some(BiasScaling::LogT),
                },
            ]
        }
        GapRegime::SmallGap | GapRegime::ModerateGap { .. } => {
            let factor = BiasScaling::SqrtTLogT.factor(horizon);
            let arm_2 = -2.0 * v[1] / ((1.0 + lambda.powf(1.5)) * (rho * fluid.n_star[1] * log_t).sqrt());
            let arm_1 = if lambda == 0.0 {
                0.0
            } else {
                -2.0 * v[0] / ((1.0 + lambda.powf(-1.5)) * (rho * fluid.n_star[0] * log_t).sqrt())
            };
            [arm_1, arm_2]
                .into_iter()
                .enumerate()
                .map(|(arm, b)| ArmBias {
                    arm,
                    leading_bias: b,
                    scaled_constant: Some(b * factor),
                    scaling: Some(BiasScaling::SqrtTLogT),
                })
                .collect()
        }
    };
    Ok(BiasPrediction {
        horizon,
        rho,
        lambda,
        regime,
        arms,
    })
}

/// Moderate/small-gap arm-2 constant written in terms of `lambda` alone,
/// `-2 s2^2 sqrt(1 + lambda) / (sqrt(rho) (sqrt(lambda) + lambda^2))`.
pub fn moderate_arm2_constant(variance_2: f64, lambda: f64, rho: f64) -> f64 {
    -2.0 * variance_2 * (1.0 + lambda).sqrt() / (rho.sqrt() * (lambda.sqrt() + lambda * lambda))
}

/// Moderate/small-gap arm-1 constant,
/// `-2 s1^2 sqrt(1 + lambda) / (sqrt(rho) (1 + lambda^{-3/2}))`.
pub fn moderate_arm1_constant(variance_1: f64, lambda: f64, rho: f64) -> f64 {
    -2.0 * variance_1 * (1.0 + lambda).sqrt() / (rho.sqrt() * (1.0 + lambda.powf(-1.5)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{GapSpec, RewardFamily};
    use crate::fluid::solve_fluid;

    fn identical(t: u64) -> (BanditInstance, FluidSolution, f64) {
        let inst = BanditInstance::gaussian(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let f = ExplorationFunction::ucb1();
        let fluid = solve_fluid(&inst, &f, t).unwrap();
        let f_t = fluid.f_t;
        (inst, fluid, f_t)
    }

    #[test]
    fn two_arm_identical_matches_reference_matrix() {
        let (inst, fluid, f_t) = identical(100_000);
        let p = clt_two_arm(&fluid, &inst, f_t, LambdaSource::Finite).unwrap();
        let expected = [[2.0, -1.0, 1.0], [-1.0, 1.0, 0.0], [1.0, 0.0, 1.0]];
        for (i, row) in expected.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                assert!((p.cov.get(i, j) - e).abs() < 1e-12);
            }
        }
        assert!((p.w_scale[0] - f_t / 50_000.0).abs() < 1e-15);
    }

    #[test]
    fn two_arm_lambda_zero() {
        let inst = BanditInstance::gaussian(vec![1.0, 0.0], vec![0.5, 2.0]).unwrap();
        let fluid = solve_fluid(&inst, &ExplorationFunction::ucb1(), 1000).unwrap();
        let p = clt_two_arm(&fluid, &inst, fluid.f_t, LambdaSource::Limit(0.0)).unwrap();
        let expected = Matrix::from_rows(&[vec![4.0, 0.0, 4.0], vec![0.0, 0.25, 0.0], vec![4.0, 0.0, 4.0]]);
        assert_eq!(p.cov, expected);
        assert!(clt_two_arm(&fluid, &inst, fluid.f_t, LambdaSource::Limit(1.5)).is_err());
    }

    #[test]
    fn indistinguishable_arms_variance() {
        let k = 4;
        let sds = vec![1.0, 0.5, 2.0, 1.5];
        let inst = BanditInstance::new(RewardFamily::Gaussian, vec![0.0; k], sds.clone(), None);
        let fluid = solve_fluid(&inst, &ExplorationFunction::ucb1(), 40_000).unwrap();
        let p = clt_k_arm(&fluid, &inst, fluid.f_t).unwrap();
        let var: Vec<f64> = sds.iter().map(|s| s * s).collect();
        let kf = k as f64;
        for i in 0..k {
            let others: f64 = (0..k).filter(|&j| j != i).map(|j| var[j]).sum();
            let expected = others / (kf * kf) + (1.0 - 1.0 / kf).powi(2) * var[i];
            assert!((p.cov.get(i, i) - expected).abs() < 1e-12, "arm {i}");
        }
    }

    #[test]
    fn bias_small_gap_constant() {
        let inst = BanditInstance::gaussian(vec![1.0, 1.0], vec![0.5, 0.5]).unwrap();
        let f = ExplorationFunction::ucb1();
        let fluid = solve_fluid(&inst, &f, 10_000_000).unwrap();
        let b = bias_prediction(&fluid, &inst, &f, LambdaSource::Finite).unwrap();
        assert!((b.arms[1].scaled_constant.unwrap() + 0.25).abs() < 1e-12);
        assert!((b.arms[0].scaled_constant.unwrap() + 0.25).abs() < 1e-12);
        let other = ExplorationFunction::custom(|t| t.ln(), 0.3);
        assert!(matches!(
            bias_prediction(&fluid, &inst, &other, LambdaSource::Finite),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn bias_large_gap_constant() {
        let f = ExplorationFunction::ucb1();
        let t = 1_000_000_000;
        let inst = GapSpec::FixedGap { delta: 1.0 }
            .two_arm_instance(&f, t, 0.0, [1.0, 1.0], RewardFamily::Gaussian)
            .unwrap();
        let fluid = solve_fluid(&inst, &f, t).unwrap();
        let b = bias_prediction(&fluid, &inst, &f, LambdaSource::Finite).unwrap();
        assert_eq!(b.regime, GapRegime::LargeGap);
        assert_eq!(b.arms[1].scaled_constant, Some(-1.0));
        assert_eq!(b.arms[0].leading_bias, 0.0);
        assert_eq!(b.arms[0].scaled_constant, None);
    }

    #[test]
    fn regret_zero_gap_and_equal_deviations() {
        let (inst, fluid, f_t) = identical(10_000);
        let r = regret_prediction(&fluid, &inst, f_t, LambdaSource::Finite).unwrap();
        assert_eq!(r.typical_scale, 0.0);
        assert_eq!(r.typical_deviation, 0.0);
        assert_eq!(r.clt_implied_sd, 0.0);

        let inst = BanditInstance::gaussian(vec![0.01, 0.0], vec![1.3, 0.7]).unwrap();
        let fluid = solve_fluid(&inst, &ExplorationFunction::ucb1(), 10_000).unwrap();
        let r = regret_prediction(&fluid, &inst, fluid.f_t, LambdaSource::Limit(1.0)).unwrap();
        assert_eq!(r.typical_deviation, r.clt_implied_sd);
    }

    #[test]
    fn mc_oracle_degenerate_noise() {
        let inst = BanditInstance::new(RewardFamily::Gaussian, vec![1.0, 0.5, 0.0], vec![0.0; 3], None);
        let fluid = solve_fluid(&inst, &ExplorationFunction::ucb1(), 10_000).unwrap();
        let cov = clt_from_perturbation_mc(&fluid, &inst, fluid.f_t, 10_000, 3).unwrap();
        assert!(cov.data.iter().all(|v| *v == 0.0));
    }
}
