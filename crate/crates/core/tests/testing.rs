mod common;

use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use rephmm::em::EmConfig;
use rephmm::forward_backward::compute_rlis;
use rephmm::sim::{simulate_replication, true_params, SimConfig};
use rephmm::{oracle_test, step_up, test_replicability};

/// Largest set `{j : rlis_j ≤ λ}` over every candidate `λ` whose mean is at most `q`.
fn brute_force_rejections(rlis: &[f64], q: f64) -> Vec<usize> {
    let mut best: Vec<usize> = Vec::new();
    for &lambda in rlis {
        let set: Vec<usize> = (0..rlis.len()).filter(|&j| rlis[j] <= lambda).collect();
        let mean = set.iter().map(|&j| rlis[j]).sum::<f64>() / set.len() as f64;
        if mean <= q && set.len() > best.len() {
            best = set;
        }
    }
    best
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

fn random_rlis(r: &mut impl Rng, n: usize) -> Vec<f64> {
    // Rounding to a coarse grid produces ties.
    let coarse = r.random_bool(0.3);
    (0..n)
        .map(|_| {
            let x: f64 = r.random::<f64>().powi(3);
            if coarse { (x * 50.0).round() / 50.0 } else { x }
        })
        .collect()
}

fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let a: std::collections::HashSet<_> = a.iter().collect();
    let b: std::collections::HashSet<_> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 { 1.0 } else { a.intersection(&b).count() as f64 / union as f64 }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn step_up_matches_brute_force_scan() {
    let mut r = rng(21);
    for _ in 0..200 {
        let n = r.random_range(1..=1000);
        let rlis = random_rlis(&mut r, n);
        for q in [0.01, 0.05, 0.1, 0.3] {
            let fast = step_up(&rlis, q);
            assert_eq!(sorted(fast.rejected.clone()), brute_force_rejections(&rlis, q));
            if fast.num_rejected() > 0 {
                assert!(fast.estimated_fdp <= q);
            }
        }
    }
}

#[test]
fn large_input_matches_prefix_scan() {
    let mut r = rng(22);
    let rlis: Vec<f64> = (0..10_000).map(|_| r.random::<f64>().powi(4)).collect();
    let mut s = rlis.clone();
    s.sort_by(f64::total_cmp);
    let (mut sum, mut k) = (0.0, 0);
    for (i, x) in s.iter().enumerate() {
        sum += x;
        if sum / (i + 1) as f64 <= 0.05 {
            k = i + 1;
        }
    }
    assert_eq!(step_up(&rlis, 0.05).num_rejected(), k);
}

#[test]
fn everything_near_one_rejects_nothing() {
    let out = step_up(&vec![0.999; 500], 0.05);
    assert_eq!(out.num_rejected(), 0);
    assert_eq!(out.threshold, None);
}

#[test]
fn conditional_sum_tracks_false_discoveries() {
    let cfg = SimConfig { m: 2_000, mu1: 2.5, mu2: 2.5, ..SimConfig::default() };
    let params = true_params(&cfg).unwrap();
    let pairs: Vec<(f64, f64)> = (0..200u64)
        .into_par_iter()
        .map(|rep| {
            let (truth, data) = simulate_replication(&cfg, rep).unwrap();
            let out = oracle_test(&params, &data, 0.1).unwrap();
            let expected: f64 = out.rejected.iter().map(|&j| out.rlis[j]).sum();
            let v = out.rejected.iter().filter(|&&j| truth.states[j].is_replicability_null()).count();
            (expected, v as f64)
        })
        .collect();
    let expected: f64 = pairs.iter().map(|p| p.0).sum();
    let observed: f64 = pairs.iter().map(|p| p.1).sum();
    assert!(observed > 0.0);
    assert!((expected - observed).abs() / observed <= 0.15, "{expected} vs {observed}");
}

#[test]
fn oracle_without_replicable_signal_rejects_nothing() {
    let mut rows = rephmm::sim::TRANSITION_S1;
    for row in rows.iter_mut() {
        row[3] = 1e-9;
    }
    let cfg = SimConfig { m: 2_000, transition: rows, ..SimConfig::default() };
    let params = true_params(&cfg).unwrap();
    assert!(params.pi.get(3) < 1e-8);
    for rep in 0..20 {
        let (_, data) = simulate_replication(&cfg, rep).unwrap();
        assert_eq!(oracle_test(&params, &data, 0.05).unwrap().num_rejected(), 0);
    }
}

#[test]
fn fitted_rejections_agree_with_oracle_at_strong_signal() {
    let cfg = SimConfig { m: 10_000, mu1: 2.5, mu2: 2.5, ..SimConfig::default() };
    let params = true_params(&cfg).unwrap();
    let scores: Vec<f64> = (0..20u64)
        .into_par_iter()
        .map(|rep| {
            let (_, data) = simulate_replication(&cfg, rep).unwrap();
            let oracle = oracle_test(&params, &data, 0.05).unwrap();
            let em = EmConfig { store_trace: false, ..EmConfig::default() };
            let (_, fitted) = test_replicability(&data, 0.05, &em).unwrap();
            jaccard(&oracle.rejected, &fitted.rejected)
        })
        .collect();
    let med = median(scores);
    assert!(med >= 0.9, "median Jaccard {med}");
}

#[test]
fn looser_level_on_real_fit_is_a_superset() {
    let cfg = SimConfig { m: 2_000, ..SimConfig::default() };
    let (_, data) = simulate_replication(&cfg, 0).unwrap();
    let fit = rephmm::fit(&data, &EmConfig::default()).unwrap();
    let rlis = compute_rlis(&fit.params, &data).unwrap();
    let tight = sorted(step_up(&rlis, 0.05).rejected);
    let loose = sorted(step_up(&rlis, 0.5).rejected);
    assert!(tight.iter().all(|j| loose.binary_search(j).is_ok()));
}

#[test]
fn invalid_levels_are_rejected() {
    let cfg = SimConfig { m: 200, ..SimConfig::default() };
    let (_, data) = simulate_replication(&cfg, 0).unwrap();
    let params = true_params(&cfg).unwrap();
    for q in [0.0, 1.0, -0.1, f64::NAN] {
        assert!(oracle_test(&params, &data, q).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn rejection_sets_nest_in_q(seed in any::<u64>(), n in 1usize..300, q1 in 0.001f64..0.5, q2 in 0.001f64..0.5) {
        let rlis = random_rlis(&mut rng(seed), n);
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        let small = sorted(step_up(&rlis, lo).rejected);
        let big = sorted(step_up(&rlis, hi).rejected);
        prop_assert!(small.iter().all(|j| big.binary_search(j).is_ok()));
    }

    #[test]
    fn permuting_features_permutes_rejections(seed in any::<u64>(), n in 1usize..300, q in 0.001f64..0.5) {
        let mut r = rng(seed);
        let rlis = random_rlis(&mut r, n);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut r);
        let permuted: Vec<f64> = order.iter().map(|&j| rlis[j]).collect();
        let base = sorted(step_up(&rlis, q).rejected);
        let moved = sorted(step_up(&permuted, q).rejected.iter().map(|&i| order[i]).collect());
        prop_assert_eq!(base, moved);
    }

    #[test]
    fn estimated_fdp_is_the_rejected_mean(seed in any::<u64>(), n in 1usize..300, q in 0.001f64..0.5) {
        let out = step_up(&random_rlis(&mut rng(seed), n), q);
        if out.num_rejected() > 0 {
            let mean = out.rejected.iter().map(|&j| out.rlis[j]).sum::<f64>() / out.num_rejected() as f64;
            prop_assert!((mean - out.estimated_fdp).abs() <= 1e-12);
            prop_assert!(out.rejected.iter().all(|&j| out.rlis[j] <= out.threshold.unwrap()));
        }
    }
}
