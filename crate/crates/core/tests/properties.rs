use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use banditflow::engine::{run_ensemble, run_ucb, tie_break, BatchTarget, Batching, RunConfig};
use banditflow::env::{sample_reward, stream_rng, BanditInstance, ExplorationFunction, RewardStreams, StreamDomain};
use banditflow::fluid::{lambda_for_theta, lambda_star_limit, moderate_gap_lhs, solve_fluid};
use banditflow::env::GapSpec;
use banditflow::perturb::{solve_perturbation_closed_form, solve_perturbation_ucb, IndexDerivatives};
use banditflow::stats::Moments;

fn instance_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, u64)> {
    (2usize..=8)
        .prop_flat_map(|k| {
            (
                prop::collection::vec(prop_oneof![Just(0.0f64), 0.0..1e-3f64, 0.0..5.0f64], k),
                prop::collection::vec(0.05..3.0f64, k),
                (2.0..13.0f64).prop_map(|e| 10f64.powf(e).round() as u64),
            )
        })
        .prop_map(|(mut means, sds, t): (Vec<f64>, Vec<f64>, u64)| {
            means.sort_by(|a, b| b.total_cmp(a));
            (means, sds, t)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fluid_satisfies_index_equations((means, sds, horizon) in instance_strategy()) {
        let inst = BanditInstance::gaussian(means, sds).unwrap();
        let fluid = solve_fluid(&inst, &ExplorationFunction::ucb1(), horizon).unwrap();
        let inv1 = fluid.n_star[0].powf(-0.5);
        for i in 1..inst.arm_count() {
            let lhs = fluid.n_star[i].powf(-0.5) - inv1;
            let rhs = fluid.gaps[i] / fluid.f_t;
            let scale = inv1.max(fluid.n_star[i].powf(-0.5)).max(rhs);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
            prop_assert!(fluid.n_star[i] <= fluid.n_star[0] * (1.0 + 1e-12));
        }
        let total: f64 = fluid.n_star.iter().sum();
        prop_assert!((total - horizon as f64).abs() <= 1e-9 * horizon as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn perturbation_is_linear_and_conserving(
        d_n in prop::collection::vec(1e-6..1.0f64, 4),
        d_mu in prop::collection::vec(0.2..3.0f64, 4),
        e1 in prop::collection::vec(-1.0..1.0f64, 4),
        e2 in prop::collection::vec(-1.0..1.0f64, 4),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
    ) {
        let d = IndexDerivatives { d_mu, d_n: d_n.iter().map(|x| -x).collect() };
        let combo: Vec<f64> = e1.iter().zip(&e2).map(|(x, y)| a * x + b * y).collect();
        let w1 = solve_perturbation_closed_form(&d, &e1).unwrap().omega;
        let w2 = solve_perturbation_closed_form(&d, &e2).unwrap().omega;
        let wc = solve_perturbation_closed_form(&d, &combo).unwrap();
        let norm = wc.omega.iter().chain(&w1).chain(&w2).fold(1e-300_f64, |m, x| m.max(x.abs()));
        for i in 0..4 {
            prop_assert!((wc.omega[i] - (a * w1[i] + b * w2[i])).abs() <= 1e-9 * norm * (1.0 + a.abs() + b.abs()));
        }
        prop_assert!(wc.total().abs() <= 1e-12 * norm);
    }

    #[test]
    fn ucb_specialization_matches_generic((means, sds, horizon) in instance_strategy(), seed in 0u64..1000) {
        let inst = BanditInstance::gaussian(means, sds).unwrap();
        let fluid = solve_fluid(&inst, &ExplorationFunction::ucb1(), horizon).unwrap();
        let k = inst.arm_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>();
        let special = solve_perturbation_ucb(&fluid, fluid.f_t, &eps).unwrap().omega;
        let generic = solve_perturbation_closed_form(&IndexDerivatives::ucb(&fluid.n_star, fluid.f_t), &eps).unwrap().omega;
        let norm = generic.iter().fold(1e-300_f64, |m, x| m.max(x.abs()));
        for (s, g) in special.iter().zip(&generic) {
            prop_assert!((s - g).abs() <= 1e-9 * norm);
        }
    }
}

#[test]
fn gaussian_batch_moments() {
    let inst = BanditInstance::gaussian(vec![0.3, 0.0], vec![1.7, 1.0]).unwrap();
    let m = 400u64;
    let mut streams = RewardStreams::new(5, 0, 2, StreamDomain::Synthetic);
    let mut sums = Moments::default();
    let mut spreads = Moments::default();
    for _ in 0..40_000 {
        let b = sample_reward(&inst, 0, m, &mut streams).unwrap();
        sums.push(b.sum);
        // within-batch spread is sigma^2 * chi^2_{m-1}
        spreads.push(b.sum_sq - b.sum * b.sum / m as f64);
    }
    let mf = m as f64;
    assert!((sums.mean - 0.3 * mf).abs() < 4.0 * sums.mean_se());
    assert!((sums.variance() / (1.7f64.powi(2) * mf) - 1.0).abs() < 0.03);
    let expected_spread = 1.7f64.powi(2) * (mf - 1.0);
    assert!((spreads.mean - expected_spread).abs() < 4.0 * spreads.mean_se());
    assert!(sample_reward(&inst, 2, 1, &mut streams).is_err());
    assert!(sample_reward(&inst, 0, 0, &mut streams).is_err());
}

/// Straightforward step-by-step UCB with plain sums, drawing from the same
/// reward streams as the engine.
fn reference_ucb(means: &[f64], sds: &[f64], horizon: u64, seed: u64, rep: u64) -> (Vec<u64>, Vec<f64>) {
    let k = means.len();
    let mut rngs: Vec<ChaCha8Rng> = (0..k).map(|a| stream_rng(seed, rep, a, StreamDomain::Rewards)).collect();
    let mut draw = |a: usize| -> f64 {
        let z: f64 = StandardNormal.sample(&mut rngs[a]);
        means[a] + sds[a] * z
    };
    let mut n = vec![0u64; k];
    let mut s = vec![0.0; k];
    for a in 0..k {
        s[a] += draw(a);
        n[a] += 1;
    }
    for t in (k as u64 + 1)..=horizon {
        let f = (2.0 * (t as f64).ln()).sqrt();
        let mut best = 0;
        let mut best_index = f64::NEG_INFINITY;
        for a in 0..k {
            let index = s[a] / n[a] as f64 + f / (n[a] as f64).sqrt();
            if index > best_index {
                best = a;
                best_index = index;
            }
        }
        s[best] += draw(best);
        n[best] += 1;
    }
    let mu = s.iter().zip(&n).map(|(x, &c)| x / c as f64).collect();
    (n, mu)
}

#[test]
fn engine_matches_reference_simulator() {
    for (means, sds, horizon) in [
        (vec![0.5, 0.5], vec![1.0, 1.0], 10),
        (vec![1.0, 0.2], vec![0.5, 2.0], 2_000),
        (vec![1.0, 0.9, 0.9, 0.1], vec![1.0, 0.3, 1.0, 1.0], 5_000),
    ] {
        let inst = BanditInstance::gaussian(means.clone(), sds.clone()).unwrap();
        for rep in 0..5 {
            let mut cfg = RunConfig::new(inst.clone(), ExplorationFunction::ucb1(), horizon, 99);
            cfg.replication = rep;
            let got = run_ucb(&cfg).unwrap();
            let (n, mu) = reference_ucb(&means, &sds, horizon, 99, rep);
            assert_eq!(got.pulls, n);
            for (a, b) in got.sample_means.iter().zip(&mu) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn initialization_only() {
    let inst = BanditInstance::gaussian(vec![1.0, 0.5, 0.0], vec![1.0; 3]).unwrap();
    let r = run_ucb(&RunConfig::new(inst, ExplorationFunction::ucb1(), 3, 1)).unwrap();
    assert_eq!(r.pulls, vec![1, 1, 1]);
    let mut rng = stream_rng(1, 0, 2, StreamDomain::Rewards);
    let z: f64 = StandardNormal.sample(&mut rng);
    assert_eq!(r.sample_means[2], z);
}

#[test]
fn tie_break_examples() {
    assert_eq!(tie_break(&[1.0, 1.0]), 0);
    assert_eq!(tie_break(&[0.5, 0.7]), 1);
    assert_eq!(tie_break(&[0.7, 0.7, 0.7]), 0);
}

#[test]
fn conservation_in_both_modes() {
    let inst = BanditInstance::gaussian(vec![1.0, 0.7, 0.7], vec![1.0, 0.5, 2.0]).unwrap();
    for batching in [
        Batching::Exact,
        Batching::Batched { fraction: 0.02, apply_to: BatchTarget::AllArms },
        Batching::Batched { fraction: 0.3, apply_to: BatchTarget::SuperiorOnly },
    ] {
        let cfg = RunConfig::new(inst.clone(), ExplorationFunction::ucb1(), 30_007, 4).with_batching(batching);
        let results = run_ensemble(&cfg, 200, 2).unwrap();
        assert_eq!(results.len(), 200);
        for (i, r) in results.iter().enumerate() {
            assert_eq!(r.replication, i as u64);
            assert_eq!(r.pulls.iter().sum::<u64>(), 30_007);
            assert!(r.pulls.iter().all(|&n| n >= 1));
        }
    }
}

#[test]
fn ensembles_are_reproducible() {
    let inst = BanditInstance::gaussian(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
    let cfg = RunConfig::new(inst, ExplorationFunction::ucb1(), 5_000, 21);
    let a = run_ensemble(&cfg, 40, 1).unwrap();
    assert_eq!(a, run_ensemble(&cfg, 40, 1).unwrap());
    assert_eq!(a, run_ensemble(&cfg, 40, 4).unwrap());
}

#[test]
fn half_split_on_average_with_identical_arms() {
    let inst = BanditInstance::gaussian(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
    let cfg = RunConfig::new(inst, ExplorationFunction::ucb1(), 100_000, 2);
    let share: Moments = run_ensemble(&cfg, 2_000, 4)
        .unwrap()
        .iter()
        .map(|r| r.pulls[1] as f64 / 1e5)
        .collect();
    assert!((share.mean - 0.5).abs() < 0.02, "{}", share.mean);
}

#[test]
fn pull_ratio_concentrates_along_ladder() {
    let f = ExplorationFunction::ucb1();
    let mut fractions = Vec::new();
    for horizon in [1_000u64, 10_000, 100_000] {
        let inst = BanditInstance::gaussian(vec![1.0, 0.8], vec![1.0, 1.0]).unwrap();
        let n2 = solve_fluid(&inst, &f, horizon).unwrap().n_star[1];
        let cfg = RunConfig::new(inst, f.clone(), horizon, 8);
        let results = run_ensemble(&cfg, 1_000, 4).unwrap();
        let far = results.iter().filter(|r| (r.pulls[1] as f64 / n2 - 1.0).abs() > 0.2).count();
        fractions.push(far as f64 / results.len() as f64);
    }
    assert!(fractions[0] > fractions[1] && fractions[1] > fractions[2], "{fractions:?}");
}

#[test]
fn lambda_limits_across_regimes() {
    assert_eq!(lambda_star_limit(&GapSpec::FixedGap { delta: 0.5 }).unwrap(), 0.0);
    assert_eq!(lambda_star_limit(&GapSpec::SmallGapZero).unwrap(), 1.0);
    // lambda* decreases as theta grows
    let mut last = 1.0;
    for theta in [0.1, 0.5, 1.0, 2.0, 5.0] {
        let l = lambda_for_theta(theta).unwrap();
        assert!(l < last);
        assert!((moderate_gap_lhs(l) - theta).abs() < 1e-10);
        last = l;
    }
}
