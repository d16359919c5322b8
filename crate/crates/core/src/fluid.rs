//! The fluid fixed-point system of generalized UCB1.
//!
//! With all indices equal under the true means, the fluid pull counts solve
//!
//! ```text
//! n_i^{-1/2} - n_1^{-1/2} = Delta_i / f(T),   i = 2..K,     sum_i n_i = T.
//! ```
//!
//! Writing `x = n_1^{-1/2}` gives `n_i(x) = (x + Delta_i/f(T))^{-2}`, and
//! `g(x) = sum_i n_i(x) - T` is strictly decreasing in `x`, so the system
//! reduces to a bracketed scalar root.

use serde::{Deserialize, Serialize};

use crate::env::{eval_f, BanditInstance, ExplorationFunction, GapSpec};
use crate::error::{Error, Result};

/// Finite-T ratio `Delta sqrt(T) / f(T)` above which an arm is labelled as
/// in the large-gap regime (the fluid ratio `n_i/n_1` is then below ~1e-2).
pub const LARGE_GAP_RATIO: f64 = 10.0;

const MAX_BISECTION: usize = 400;
const MAX_NEWTON: usize = 5;
const MAX_WIDENING: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum GapRegime {
    LargeGap,
    ModerateGap { theta: f64 },
    SmallGap,
}

impl GapRegime {
    /// Label for a single finite-T ratio `Delta sqrt(T)/f(T)`.
    pub fn from_ratio(ratio: f64) -> Self {
        if ratio == 0.0 {
            GapRegime::SmallGap
        } else if ratio >= LARGE_GAP_RATIO {
            GapRegime::LargeGap
        } else {
            GapRegime::ModerateGap { theta: ratio }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluidSolution {
    pub horizon: u64,
    /// `f(T)` used in the solve.
    pub f_t: f64,
    pub gaps: Vec<f64>,
    pub n_star: Vec<f64>,
    /// `n_i^{-1/2} - n_1^{-1/2} - Delta_i/f(T)` for `i = 2..K`.
    pub residuals: Vec<f64>,
    /// `sum_i n_i - T`.
    pub sum_residual: f64,
    /// `lambda[i][j] = n_i / n_j`.
    pub lambda: Vec<Vec<f64>>,
    /// Finite-T regime label of each inferior arm.
    pub regime: Vec<GapRegime>,
}

impl FluidSolution {
    pub fn arm_count(&self) -> usize {
        self.n_star.len()
    }

    /// `n_2 / n_1`, the two-arm sampling ratio.
    pub fn lambda_21(&self) -> f64 {
        self.lambda[1][0]
    }
}

/// Solves the fluid system for `instance` at horizon `T` with `f(T)` taken
/// from `f`.
pub fn solve_fluid(instance: &BanditInstance, f: &ExplorationFunction, horizon: u64) -> Result<FluidSolution> {
    let f_t = eval_f(f, horizon)?;
    solve_fluid_with_scale(instance, f_t, horizon)
}

/// Same as [`solve_fluid`] for an explicit scalar `f(T)`.
pub fn solve_fluid_with_scale(instance: &BanditInstance, f_t: f64, horizon: u64) -> Result<FluidSolution> {
    let report = crate::env::validate_instance(instance);
    if !report.is_empty() {
        return Err(Error::InvalidInstance(report));
    }
    let gaps = instance.gaps();
    let k = gaps.len();
    if horizon < k as u64 {
        return Err(Error::Domain(format!("horizon {horizon} smaller than arm count {k}")));
    }
    if !(f_t > 0.0 && f_t.is_finite()) {
        return Err(Error::Domain(format!("f(T) = {f_t} must be positive")));
    }
    let t = horizon as f64;
    let offsets: Vec<f64> = gaps.iter().map(|d| d / f_t).collect();
    // all arms tied: the split is exactly even, skip the root finder's rounding
    let n_star: Vec<f64> = if offsets.iter().all(|&d| d == 0.0) {
        vec![t / k as f64; k]
    } else {
        let x = solve_share_root(&offsets, t)?;
        offsets.iter().map(|d| (x + d).powi(-2)).collect()
    };
    let inv_sqrt_1 = n_star[0].powf(-0.5);
    let residuals = (1..k)
        .map(|i| n_star[i].powf(-0.5) - inv_sqrt_1 - offsets[i])
        .collect();
    let sum_residual = crate::numeric::compensated_sum(n_star.iter().copied()) - t;
    let lambda = n_star
        .iter()
        .map(|ni| n_star.iter().map(|nj| ni / nj).collect())
        .collect();
    let regime = gaps[1..]
        .iter()
        .map(|d| GapRegime::from_ratio(d * t.sqrt() / f_t))
        .collect();
    Ok(FluidSolution {
        horizon,
        f_t,
        gaps,
        n_star,
        residuals,
        sum_residual,
        lambda,
        regime,
    })
}

/// Root of `g(x) = sum_i (x + d_i)^{-2} - T` on `x > 0`.
fn solve_share_root(offsets: &[f64], t: f64) -> Result<f64> {
    let k = offsets.len() as f64;
    let g = |x: f64| crate::numeric::compensated_sum(offsets.iter().map(|d| (x + d).powi(-2))) - t;
    let dg = |x: f64| offsets.iter().map(|d| -2.0 * (x + d).powi(-3)).sum::<f64>();

    let mut lo = t.powf(-0.5) * 1e-3;
    let mut hi = k.sqrt() * t.powf(-0.5) * 1e3;
    let mut widen = 0;
    while g(lo) <= 0.0 {
        lo *= 1e-3;
        widen += 1;
        if widen > MAX_WIDENING {
            return Err(solver_error(0, lo, hi, g(lo), g(hi)));
        }
    }
    while g(hi) >= 0.0 {
        hi *= 1e3;
        widen += 1;
        if widen > MAX_WIDENING {
            return Err(solver_error(0, lo, hi, g(lo), g(hi)));
        }
    }

    let mut iterations = 0;
    while iterations < MAX_BISECTION {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if gm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    if iterations == MAX_BISECTION && hi - lo > 1e-12 * hi {
        return Err(solver_error(iterations, lo, hi, g(lo), g(hi)));
    }

    // Newton polish, kept inside the final bracket and only accepted when
    // it improves the residual.
    let mut x = 0.5 * (lo + hi);
    let mut gx = g(x);
    for _ in 0..MAX_NEWTON {
        let step = gx / dg(x);
        let cand = x - step;
        if !(cand.is_finite() && cand > 0.0) {
            break;
        }
        let gc = g(cand);
        if gc.abs() < gx.abs() {
            x = cand;
            gx = gc;
        } else {
            break;
        }
    }
    Ok(x)
}

fn solver_error(iterations: usize, lo: f64, hi: f64, g_lo: f64, g_hi: f64) -> Error {
    Error::Solver {
        iterations,
        lo,
        hi,
        g_lo,
        g_hi,
    }
}

/// Left-hand side `sqrt(1 + 1/lambda) - sqrt(1 + lambda)` of the moderate-gap
/// ratio equation.
pub fn moderate_gap_lhs(lambda: f64) -> f64 {
    (1.0 + 1.0 / lambda).sqrt() - (1.0 + lambda).sqrt()
}

/// Limiting two-arm sampling ratio `lim n_2/n_1` implied by a gap schedule.
pub fn lambda_star_limit(spec: &GapSpec) -> Result<f64> {
    spec.validate()?;
    Ok(match *spec {
        GapSpec::FixedGap { delta } if delta > 0.0 => 0.0,
        GapSpec::FixedGap { .. } | GapSpec::SmallGapZero => 1.0,
        GapSpec::ModerateTheta { theta } => lambda_for_theta(theta)?,
        GapSpec::TargetShare { share } => (1.0 - share) / share,
    })
}

/// Unique `lambda` in `(0, 1]` with `sqrt(1 + 1/lambda) - sqrt(1 + lambda) = theta`.
pub fn lambda_for_theta(theta: f64) -> Result<f64> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::Domain(format!("theta {theta} must be finite and non-negative")));
    }
    if theta == 0.0 {
        return Ok(1.0);
    }
    // The left-hand side is strictly decreasing; bisect in log(lambda).
    let mut lo = -1.0_f64;
    while moderate_gap_lhs(lo.exp()) <= theta {
        lo *= 2.0;
        if lo < -1400.0 {
            return Err(Error::Domain(format!("theta {theta} too large")));
        }
    }
    let mut hi = 0.0_f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if moderate_gap_lhs(mid.exp()) > theta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Finite-T ratio `Delta_T sqrt(T) / f(T)` at one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub horizon: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeClassification {
    pub regime: GapRegime,
    pub ratios: Vec<RatioPoint>,
}

/// Classifies a gap schedule by the trend of `Delta_T sqrt(T)/f(T)` along a
/// horizon grid: identically zero is small gap; growth by more than a factor
/// two across the grid is large gap; shrinkage below half is small gap;
/// otherwise moderate with `theta` read at the largest horizon.
pub fn classify_regime(spec: &GapSpec, f: &ExplorationFunction, horizons: &[u64]) -> Result<RegimeClassification> {
    let mut grid = horizons.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let ratios = grid
        .iter()
        .map(|&h| {
            let gap = spec.gap_at(f, h)?;
            Ok(RatioPoint {
                horizon: h,
                ratio: gap * (h as f64).sqrt() / eval_f(f, h)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let regime = match (ratios.first(), ratios.last()) {
        (None, _) | (_, None) => return Err(Error::Domain("empty horizon grid".to_owned())),
        (Some(first), Some(last)) => {
            if ratios.iter().all(|p| p.ratio == 0.0) {
                GapRegime::SmallGap
            } else if last.ratio > 2.0 * first.ratio {
                GapRegime::LargeGap
            } else if last.ratio < 0.5 * first.ratio {
                GapRegime::SmallGap
            } else {
                GapRegime::ModerateGap { theta: last.ratio }
            }
        }
    };
    Ok(RegimeClassification { regime, ratios })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::RewardFamily;

    fn two_arm(delta: f64) -> BanditInstance {
        BanditInstance::new(RewardFamily::Gaussian, vec![delta, 0.0], vec![1.0, 1.0], None)
    }

    #[test]
    fn zero_gap_splits_evenly() {
        let sol = solve_fluid(&two_arm(0.0), &ExplorationFunction::ucb1(), 1_000_000).unwrap();
        assert!((sol.n_star[0] - 5e5).abs() < 1e-6);
        assert!((sol.n_star[1] - 5e5).abs() < 1e-6);
        assert_eq!(sol.regime, vec![GapRegime::SmallGap]);
    }

    #[test]
    fn large_gap_matches_asymptotic_scale() {
        let f = ExplorationFunction::ucb1();
        let t = 1_000_000_000_000u64;
        let sol = solve_fluid(&two_arm(0.5), &f, t).unwrap();
        let scale = (f.value(t as f64) / 0.5).powi(2);
        let ratio = sol.n_star[1] / scale;
        assert!((0.95..=1.05).contains(&ratio), "{ratio}");
        // cross-check against a coarse independent scan of g on n_2
        let f_t = f.value(t as f64);
        let resid = |n2: f64| n2.powf(-0.5) - (t as f64 - n2).powf(-0.5) - 0.5 / f_t;
        let mut lo = 1.0;
        let mut hi = t as f64 / 2.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if resid(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lo - sol.n_star[1]).abs() / lo < 1e-9);
        assert_eq!(sol.regime, vec![GapRegime::LargeGap]);
    }

    #[test]
    fn target_share_roundtrip() {
        let f = ExplorationFunction::ucb1();
        let t = 10_000_000u64;
        let inst = GapSpec::TargetShare { share: 0.7 }
            .two_arm_instance(&f, t, 0.0, [1.0, 1.0], RewardFamily::Gaussian)
            .unwrap();
        let sol = solve_fluid(&inst, &f, t).unwrap();
        assert!((sol.n_star[0] / (0.7 * t as f64) - 1.0).abs() < 1e-8);
        assert!((sol.n_star[1] / (0.3 * t as f64) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn horizon_must_cover_arms() {
        let inst = BanditInstance::new(RewardFamily::Gaussian, vec![0.0; 3], vec![1.0; 3], None);
        assert!(solve_fluid(&inst, &ExplorationFunction::ucb1(), 2).is_err());
        assert!(solve_fluid(&inst, &ExplorationFunction::ucb1(), 3).is_ok());
    }

    #[test]
    fn lambda_limits() {
        assert_eq!(lambda_for_theta(0.0).unwrap(), 1.0);
        assert_eq!(lambda_star_limit(&GapSpec::FixedGap { delta: 0.3 }).unwrap(), 0.0);
        assert_eq!(lambda_star_limit(&GapSpec::SmallGapZero).unwrap(), 1.0);
        assert!(lambda_for_theta(-0.1).is_err());
        let lam = lambda_for_theta(1.0).unwrap();
        assert!((moderate_gap_lhs(lam) - 1.0).abs() < 1e-12);
        // n_1 = 0.7 T corresponds to lambda = 3/7
        let theta = moderate_gap_lhs(3.0 / 7.0);
        let oracle = (1.0_f64 + 7.0 / 3.0).sqrt() - (1.0_f64 + 3.0 / 7.0).sqrt();
        assert!((theta - oracle).abs() < 1e-10);
        assert!((lambda_for_theta(theta).unwrap() - 3.0 / 7.0).abs() < 1e-10);
        let share = lambda_star_limit(&GapSpec::TargetShare { share: 0.7 }).unwrap();
        assert!((share - 3.0 / 7.0).abs() < 1e-15);
        // very large theta behaves like 1/theta^2
        let big = lambda_for_theta(1e4).unwrap();
        assert!((big * 1e8 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn classification() {
        let f = ExplorationFunction::ucb1();
        let grid = [1_000, 100_000, 10_000_000, 1_000_000_000];
        assert_eq!(
            classify_regime(&GapSpec::SmallGapZero, &f, &grid).unwrap().regime,
            GapRegime::SmallGap
        );
        assert_eq!(
            classify_regime(&GapSpec::FixedGap { delta: 0.5 }, &f, &grid).unwrap().regime,
            GapRegime::LargeGap
        );
        match classify_regime(&GapSpec::ModerateTheta { theta: 1.0 }, &f, &grid).unwrap().regime {
            GapRegime::ModerateGap { theta } => assert!((theta - 1.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        // theta = 0 is the small-gap boundary
        assert_eq!(
            classify_regime(&GapSpec::ModerateTheta { theta: 0.0 }, &f, &grid).unwrap().regime,
            GapRegime::SmallGap
        );
    }
}
