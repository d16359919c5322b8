//! Ensemble statistics and verdicts against closed-form predictions.
//!
//! Covariance standard errors use a grouped jackknife: replication `r` goes
//! to group `r mod G` with `G = min(1000, count / 2)`, so the estimate depends
//! on replication identity, not on the order results arrive in.

use serde::{Deserialize, Serialize};

use crate::engine::RunResult;
use crate::env::BanditInstance;
use crate::error::{Error, Result};
use crate::fluid::FluidSolution;
use crate::numeric::{compensated_sum, Matrix};
use crate::predict::{BiasPrediction, CltPrediction, Coord, RegretPrediction};

pub const JACKKNIFE_GROUPS: usize = 1000;

/// Streaming mean and co-moment matrix with exact pairwise merging.
#[derive(Debug, Clone, PartialEq)]
pub struct CovAccumulator {
    count: u64,
    mean: Vec<f64>,
    comoment: Vec<f64>,
}

impl CovAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            comoment: vec![0.0; dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    #[inline]
    pub fn push(&mut self, x: &[f64]) {
        let d = self.dim();
        debug_assert_eq!(x.len(), d);
        self.count += 1;
        let n = self.count as f64;
        let mut delta = [0.0_f64; 32];
        let mut heap;
        let delta: &mut [f64] = if d <= 32 {
            &mut delta[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        for a in 0..d {
            delta[a] = x[a] - self.mean[a];
            self.mean[a] += delta[a] / n;
        }
        for a in 0..d {
            let after = x[a] - self.mean[a];
            for b in 0..d {
                self.comoment[b * d + a] += delta[b] * after;
            }
        }
    }

    pub fn merge(&mut self, other: &CovAccumulator) {
        assert_eq!(self.dim(), other.dim());
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let d = self.dim();
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta: Vec<f64> = (0..d).map(|a| other.mean[a] - self.mean[a]).collect();
        for a in 0..d {
            for b in 0..d {
                self.comoment[a * d + b] += other.comoment[a * d + b] + delta[a] * delta[b] * na * nb / n;
            }
        }
        for a in 0..d {
            self.mean[a] += delta[a] * nb / n;
        }
        self.count += other.count;
    }

    /// Unbiased sample covariance (zero matrix below two observations).
    pub fn covariance(&self) -> Matrix {
        let d = self.dim();
        let mut m = Matrix::zeros(d, d);
        if self.count < 2 {
            return m;
        }
        let denom = (self.count - 1) as f64;
        for a in 0..d {
            for b in 0..d {
                let v = 0.5 * (self.comoment[a * d + b] + self.comoment[b * d + a]) / denom;
                m.set(a, b, v);
            }
        }
        m
    }
}

/// Univariate central moments up to order four, mergeable.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        let n1 = self.count as f64;
        self.count += 1;
        let n = self.count as f64;
        let delta = x - self.mean;
        let dn = delta / n;
        let dn2 = dn * dn;
        let term1 = delta * dn * n1;
        self.mean += dn;
        self.m4 += term1 * dn2 * (n * n - 3.0 * n + 3.0) + 6.0 * dn2 * self.m2 - 4.0 * dn * self.m3;
        self.m3 += term1 * dn * (n - 2.0) - 3.0 * dn * self.m2;
        self.m2 += term1;
    }

    pub fn merge(&mut self, o: &Moments) {
        if o.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *o;
            return;
        }
        let (na, nb) = (self.count as f64, o.count as f64);
        let n = na + nb;
        let d = o.mean - self.mean;
        let d2 = d * d;
        let m2 = self.m2 + o.m2 + d2 * na * nb / n;
        let m3 = self.m3 + o.m3 + d * d2 * na * nb * (na - nb) / (n * n) + 3.0 * d * (na * o.m2 - nb * self.m2) / n;
        let m4 = self.m4
            + o.m4
            + d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * d2 * (na * na * o.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * d * (na * o.m3 - nb * self.m3) / n;
        self.mean += d * nb / n;
        self.m2 = m2;
        self.m3 = m3;
        self.m4 = m4;
        self.count += o.count;
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn mean_se(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.std_dev() / (self.count as f64).sqrt()
        }
    }

    pub fn skewness(&self) -> f64 {
        if self.m2 == 0.0 {
            return 0.0;
        }
        let n = self.count as f64;
        n.sqrt() * self.m3 / self.m2.powf(1.5)
    }

    pub fn excess_kurtosis(&self) -> f64 {
        if self.m2 == 0.0 {
            return 0.0;
        }
        let n = self.count as f64;
        n * self.m4 / (self.m2 * self.m2) - 3.0
    }

    /// Standard error of the sample standard deviation from the fourth moment.
    pub fn std_dev_se(&self) -> f64 {
        if self.count < 2 || self.m2 == 0.0 {
            return 0.0;
        }
        let n = self.count as f64;
        let var = self.m2 / n;
        let var_se = ((self.m4 / n - var * var).max(0.0) / n).sqrt();
        var_se / (2.0 * self.std_dev())
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// Mean with standard error, in the units of the underlying quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// Empirical `E[mean_i] - mu_i` for one arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasEstimate {
    pub arm: usize,
    pub bias: f64,
    pub se: f64,
}

impl BiasEstimate {
    pub fn from_samples(arm: usize, true_mean: f64, samples: impl IntoIterator<Item = f64>) -> Self {
        let m: Moments = samples.into_iter().map(|x| x - true_mean).collect();
        Self {
            arm,
            bias: m.mean,
            se: m.mean_se(),
        }
    }
}

/// Per-replication standardized coordinates and their empirical moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub count: usize,
    pub labels: Vec<String>,
    pub replications: Vec<u64>,
    /// One row per replication, in input order.
    #[serde(skip)]
    pub standardized: Vec<Vec<f64>>,
    pub emp_mean: Vec<Estimate>,
    pub emp_cov: Matrix,
    pub cov_se: Matrix,
    pub emp_bias: Vec<BiasEstimate>,
    pub skewness: Vec<f64>,
    pub excess_kurtosis: Vec<f64>,
}

impl EnsembleStats {
    /// Moments of arbitrary rows tagged with replication ids.
    pub fn from_rows(labels: Vec<String>, replications: Vec<u64>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = labels.len();
        if replications.len() != rows.len() {
            return Err(Error::Dimension {
                expected: rows.len(),
                found: replications.len(),
            });
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::Dimension {
                expected: d,
                found: bad.len(),
            });
        }
        let count = rows.len();
        let marginals: Vec<Moments> = (0..d).map(|a| rows.iter().map(|r| r[a]).collect()).collect();
        let mean: Vec<f64> = (0..d).map(|a| compensated_sum(rows.iter().map(|r| r[a])) / count.max(1) as f64).collect();
        let emp_cov = centered_covariance(&rows, &mean);
        let cov_se = jackknife_cov_se(&rows, &replications, &mean, &emp_cov);
        Ok(Self {
            count,
            labels,
            replications,
            emp_mean: (0..d)
                .map(|a| Estimate {
                    value: mean[a],
                    se: marginals[a].mean_se(),
                })
                .collect(),
            emp_cov,
            cov_se,
            emp_bias: Vec::new(),
            skewness: marginals.iter().map(Moments::skewness).collect(),
            excess_kurtosis: marginals.iter().map(Moments::excess_kurtosis).collect(),
            standardized: rows,
        })
    }
}

fn centered_covariance(rows: &[Vec<f64>], mean: &[f64]) -> Matrix {
    let d = mean.len();
    let n = rows.len();
    let mut m = Matrix::zeros(d, d);
    if n < 2 {
        return m;
    }
    for a in 0..d {
        for b in a..d {
            let s = compensated_sum(rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])));
            let v = s / (n - 1) as f64;
            m.set(a, b, v);
            m.set(b, a, v);
        }
    }
    m
}

fn normal_theory_cov_se(cov: &Matrix, n: usize) -> Matrix {
    let d = cov.rows;
    let mut se = Matrix::zeros(d, d);
    if n < 2 {
        return se;
    }
    for a in 0..d {
        for b in 0..d {
            let v = (cov.get(a, a) * cov.get(b, b) + cov.get(a, b).powi(2)) / (n - 1) as f64;
            se.set(a, b, v.sqrt());
        }
    }
    se
}

fn jackknife_cov_se(rows: &[Vec<f64>], replications: &[u64], mean: &[f64], cov: &Matrix) -> Matrix {
    let n = rows.len();
    let d = mean.len();
    if n < 4 {
        return normal_theory_cov_se(cov, n);
    }
    let groups = JACKKNIFE_GROUPS.min(n / 2);
    let mut count = vec![0usize; groups];
    let mut lin = vec![0.0; groups * d];
    let mut quad = vec![0.0; groups * d * d];
    for (row, &rep) in rows.iter().zip(replications) {
        let g = (rep % groups as u64) as usize;
        count[g] += 1;
        for a in 0..d {
            let ca = row[a] - mean[a];
            lin[g * d + a] += ca;
            for b in a..d {
                quad[(g * d + a) * d + b] += ca * (row[b] - mean[b]);
            }
        }
    }
    let active: Vec<usize> = (0..groups).filter(|&g| count[g] > 0).collect();
    if active.len() < 2 || active.iter().any(|&g| n - count[g] < 2) {
        return normal_theory_cov_se(cov, n);
    }
    let tot_lin: Vec<f64> = (0..d).map(|a| active.iter().map(|&g| lin[g * d + a]).sum()).collect();
    let mut se = Matrix::zeros(d, d);
    let gf = active.len() as f64;
    for a in 0..d {
        for b in a..d {
            let tot_quad: f64 = active.iter().map(|&g| quad[(g * d + a) * d + b]).sum();
            let leave_out: Vec<f64> = active
                .iter()
                .map(|&g| {
                    let m = (n - count[g]) as f64;
                    let la = tot_lin[a] - lin[g * d + a];
                    let lb = tot_lin[b] - lin[g * d + b];
                    (tot_quad - quad[(g * d + a) * d + b] - la * lb / m) / (m - 1.0)
                })
                .collect();
            let avg = leave_out.iter().sum::<f64>() / gf;
            let var = (gf - 1.0) / gf * leave_out.iter().map(|x| (x - avg).powi(2)).sum::<f64>();
            let s = var.sqrt();
            se.set(a, b, s);
            se.set(b, a, s);
        }
    }
    se
}

/// Standardizes every replication with the prediction's coordinates:
/// `W = w_scale (N_i - n_i)` and `Z = sqrt(n_i) (mean_i - mu_i)`.
pub fn standardize(
    results: &[RunResult],
    instance: &BanditInstance,
    fluid: &FluidSolution,
    prediction: &CltPrediction,
) -> Result<EnsembleStats> {
    let k = instance.arm_count();
    if fluid.arm_count() != k {
        return Err(Error::Dimension {
            expected: k,
            found: fluid.arm_count(),
        });
    }
    if let Some(bad) = results.iter().find(|r| r.pulls.len() != k || r.sample_means.len() != k) {
        return Err(Error::Dimension {
            expected: k,
            found: bad.pulls.len(),
        });
    }
    let scales: Vec<f64> = (0..prediction.dim()).map(|c| prediction.scale(c)).collect();
    let mu = instance.means();
    let rows: Vec<Vec<f64>> = results
        .iter()
        .map(|r| {
            prediction
                .coords
                .iter()
                .zip(&scales)
                .map(|(coord, s)| match *coord {
                    Coord::Pulls(i) => s * (r.pulls[i] as f64 - fluid.n_star[i]),
                    Coord::Mean(i) => s * (r.sample_means[i] - mu[i]),
                })
                .collect()
        })
        .collect();
    let mut stats = EnsembleStats::from_rows(
        prediction.labels(),
        results.iter().map(|r| r.replication).collect(),
        rows,
    )?;
    stats.emp_bias = (0..k)
        .map(|i| BiasEstimate::from_samples(i, mu[i], results.iter().map(|r| r.sample_means[i])))
        .collect();
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovTolerance {
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
    #[serde(default = "default_k_se")]
    pub k_se: f64,
    #[serde(default = "default_skew")]
    pub max_abs_skewness: f64,
    #[serde(default = "default_kurt")]
    pub max_abs_excess_kurtosis: f64,
}

fn default_abs_tol() -> f64 {
    0.02
}
fn default_k_se() -> f64 {
    4.0
}
fn default_skew() -> f64 {
    0.5
}
fn default_kurt() -> f64 {
    1.0
}

impl Default for CovTolerance {
    fn default() -> Self {
        Self {
            abs_tol: default_abs_tol(),
            k_se: default_k_se(),
            max_abs_skewness: default_skew(),
            max_abs_excess_kurtosis: default_kurt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryVerdict {
    pub row: usize,
    pub col: usize,
    pub label: String,
    pub target: f64,
    pub empirical: f64,
    pub se: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl EntryVerdict {
    pub fn excess(&self) -> f64 {
        (self.empirical - self.target).abs() / self.tolerance.max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityCheck {
    pub label: String,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceVerdict {
    pub entries: Vec<EntryVerdict>,
    /// Index into `entries` of the entry closest to (or furthest past) its tolerance.
    pub worst: usize,
    pub normality: Vec<NormalityCheck>,
    pub normality_pass: bool,
    /// Covariance entries only; normality diagnostics are reported separately.
    pub pass: bool,
}

/// Entrywise comparison of the empirical covariance (upper triangle) with a
/// prediction, at tolerance `max(abs_tol, k_se * se)`.
pub fn compare_covariance(stats: &EnsembleStats, prediction: &CltPrediction, tol: &CovTolerance) -> Result<CovarianceVerdict> {
    let d = prediction.dim();
    if stats.emp_cov.rows != d || stats.labels.len() != d {
        return Err(Error::Dimension {
            expected: d,
            found: stats.emp_cov.rows,
        });
    }
    let labels = prediction.labels();
    let mut entries = Vec::new();
    for a in 0..d {
        for b in a..d {
            let target = prediction.cov.get(a, b);
            let empirical = stats.emp_cov.get(a, b);
            let se = stats.cov_se.get(a, b);
            let tolerance = tol.abs_tol.max(tol.k_se * se);
            entries.push(EntryVerdict {
                row: a,
                col: b,
                label: format!("cov({}, {})", labels[a], labels[b]),
                target,
                empirical,
                se,
                tolerance,
                pass: (empirical - target).abs() <= tolerance,
            });
        }
    }
    let worst = entries
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.excess().total_cmp(&y.1.excess()))
        .map_or(0, |(i, _)| i);
    let normality: Vec<NormalityCheck> = (0..d)
        .map(|a| NormalityCheck {
            label: labels[a].clone(),
            skewness: stats.skewness[a],
            excess_kurtosis: stats.excess_kurtosis[a],
            pass: stats.skewness[a].abs() <= tol.max_abs_skewness
                && stats.excess_kurtosis[a].abs() <= tol.max_abs_excess_kurtosis,
        })
        .collect();
    Ok(CovarianceVerdict {
        pass: entries.iter().all(|e| e.pass),
        normality_pass: normality.iter().all(|n| n.pass),
        entries,
        worst,
        normality,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasTolerance {
    /// Fraction of `|target|`.
    #[serde(default = "default_rel")]
    pub relative: f64,
    #[serde(default = "default_bias_abs")]
    pub absolute: f64,
    /// Multiple of the standard error, 0 to disable.
    #[serde(default)]
    pub k_se: f64,
}

fn default_rel() -> f64 {
    0.4
}
fn default_bias_abs() -> f64 {
    1e-12
}

impl Default for BiasTolerance {
    fn default() -> Self {
        Self {
            relative: default_rel(),
            absolute: default_bias_abs(),
            k_se: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVerdict {
    pub arm: usize,
    pub target: f64,
    pub empirical: f64,
    pub se: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub arms: Vec<BiasVerdict>,
    /// Arms without a scaled constant in the predicted regime.
    pub skipped: Vec<usize>,
    pub pass: bool,
}

/// Compares scaled empirical biases with the predicted constants.
pub fn compare_bias(emp_bias: &[BiasEstimate], prediction: &BiasPrediction, tol: &BiasTolerance) -> Result<BiasReport> {
    let mut arms = Vec::new();
    let mut skipped = Vec::new();
    for pred in &prediction.arms {
        let (Some(target), Some(scaling)) = (pred.scaled_constant, pred.scaling) else {
            skipped.push(pred.arm);
            continue;
        };
        let est = emp_bias
            .iter()
            .find(|b| b.arm == pred.arm)
            .ok_or(Error::Dimension {
                expected: prediction.arms.len(),
                found: emp_bias.len(),
            })?;
        let factor = scaling.factor(prediction.horizon);
        let empirical = est.bias * factor;
        let se = est.se * factor;
        let tolerance = (tol.relative * target.abs()).max(tol.absolute).max(tol.k_se * se);
        let within = (empirical - target).abs() <= tolerance;
        let sign_ok = target >= 0.0 || empirical < 0.0 || target.abs() <= tol.absolute;
        arms.push(BiasVerdict {
            arm: pred.arm,
            target,
            empirical,
            se,
            tolerance,
            pass: within && sign_ok,
        });
    }
    Ok(BiasReport {
        pass: arms.iter().all(|a| a.pass),
        arms,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretStats {
    pub count: usize,
    pub mean: Estimate,
    pub sd: Estimate,
    pub typical_scale: f64,
    pub clt_implied_sd: f64,
    /// `mean / R*`; absent when `R* = 0`.
    pub mean_ratio: Option<Estimate>,
    /// `sd / clt_implied_sd`; absent when the prediction is zero.
    pub sd_ratio: Option<Estimate>,
}

pub fn regret_stats(results: &[RunResult], prediction: &RegretPrediction) -> Result<RegretStats> {
    if let Some(bad) = results.iter().find(|r| r.pulls.len() != 2) {
        return Err(Error::Unsupported(format!(
            "regret statistics need two arms, got {}",
            bad.pulls.len()
        )));
    }
    let m: Moments = results.iter().map(|r| r.pseudo_regret).collect();
    let mean = Estimate {
        value: m.mean,
        se: m.mean_se(),
    };
    let sd = Estimate {
        value: m.std_dev(),
        se: m.std_dev_se(),
    };
    let ratio = |e: Estimate, denom: f64| {
        (denom > 0.0).then(|| Estimate {
            value: e.value / denom,
            se: e.se / denom,
        })
    };
    Ok(RegretStats {
        count: results.len(),
        mean_ratio: ratio(mean, prediction.typical_scale),
        sd_ratio: ratio(sd, prediction.clt_implied_sd),
        mean,
        sd,
        typical_scale: prediction.typical_scale,
        clt_implied_sd: prediction.clt_implied_sd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulator_merge_matches_single_pass() {
        let data: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let x = (i as f64 * 0.37).sin() * 3.0 + 10.0;
                vec![x, x * 0.5 + (i as f64).cos(), (i % 7) as f64]
            })
            .collect();
        let mut whole = CovAccumulator::new(3);
        data.iter().for_each(|r| whole.push(r));
        let mut left = CovAccumulator::new(3);
        let mut right = CovAccumulator::new(3);
        data[..57].iter().for_each(|r| left.push(r));
        data[57..].iter().for_each(|r| right.push(r));
        left.merge(&right);
        let (a, b) = (whole.covariance(), left.covariance());
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-12);
        }
        let stats = EnsembleStats::from_rows(vec!["a".into(), "b".into(), "c".into()], (0..200).collect(), data).unwrap();
        for (x, y) in a.data.iter().zip(&stats.emp_cov.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn moments_merge_and_shape() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
        let whole: Moments = xs.iter().copied().collect();
        let mut a: Moments = xs[..300].iter().copied().collect();
        let b: Moments = xs[300..].iter().copied().collect();
        a.merge(&b);
        assert!((whole.mean - a.mean).abs() < 1e-14);
        assert!((whole.variance() - a.variance()).abs() < 1e-12);
        assert!((whole.skewness() - a.skewness()).abs() < 1e-9);
        assert!((whole.excess_kurtosis() - a.excess_kurtosis()).abs() < 1e-9);
        // uniform on [0, 1): skewness 0, excess kurtosis -1.2
        assert!(whole.skewness().abs() < 1e-3);
        assert!((whole.excess_kurtosis() + 1.2).abs() < 1e-2);
    }

    #[test]
    fn dimension_errors() {
        assert!(EnsembleStats::from_rows(vec!["a".into()], vec![0], vec![vec![1.0, 2.0]]).is_err());
        assert!(EnsembleStats::from_rows(vec!["a".into()], vec![0, 1], vec![vec![1.0]]).is_err());
    }

    #[test]
    fn small_counts_have_positive_se() {
        let s = EnsembleStats::from_rows(
            vec!["a".into(), "b".into()],
            vec![0, 1],
            vec![vec![0.0, 1.0], vec![1.0, 3.0]],
        )
        .unwrap();
        assert!(s.cov_se.data.iter().all(|v| *v > 0.0));
        assert!(s.emp_mean.iter().all(|e| e.se > 0.0));
    }
}
