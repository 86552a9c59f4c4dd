mod common;

use common::*;
use rephmm::model::{StateCode, TransitionMatrix, NUM_STATES};
use rephmm::sim::*;
use rephmm::stationary_from_transition;

fn ks_uniform(mut y: Vec<f64>) -> f64 {
    y.sort_by(f64::total_cmp);
    let n = y.len() as f64;
    y.iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
        .fold(0.0, f64::max)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn state_frequencies_approach_stationary_vector() {
    for scenario in [Scenario::S1, Scenario::S2] {
        let cfg = SimConfig { m: 100_000, ..SimConfig::default() }.with_scenario(scenario);
        let pi = stationary(&cfg.transition_matrix().unwrap());
        let truth = simulate_states(&cfg, &mut rng(41)).unwrap();
        for s in 0..NUM_STATES {
            let freq = truth.states.iter().filter(|c| c.index() == s).count() as f64 / cfg.m as f64;
            assert!((freq - pi[s]).abs() <= 0.01, "{scenario:?} state {s}: {freq} vs {}", pi[s]);
        }
    }
}

#[test]
fn transition_frequencies_match_rows() {
    let cfg = SimConfig { m: 100_000, ..SimConfig::default() };
    let a = cfg.transition_matrix().unwrap();
    let truth = simulate_states(&cfg, &mut rng(42)).unwrap();
    let mut counts = [[0.0f64; NUM_STATES]; NUM_STATES];
    for w in truth.states.windows(2) {
        counts[w[0].index()][w[1].index()] += 1.0;
    }
    // Row 0 has tens of thousands of transitions; the others a few thousand.
    for k in 0..NUM_STATES {
        let total: f64 = counts[k].iter().sum();
        for l in 0..NUM_STATES {
            let se = (a.get(k, l) * (1.0 - a.get(k, l)) / total).sqrt();
            assert!((counts[k][l] / total - a.get(k, l)).abs() <= 5.0 * se + 1e-3);
        }
    }
}

#[test]
fn null_pvalues_are_uniform() {
    let cfg = SimConfig { m: 10_000, ..SimConfig::default() };
    let truth = SimTruth { states: vec![StateCode::NULL_NULL; cfg.m] };
    let data = simulate_pvalues(&truth, &cfg, &mut rng(43)).unwrap();
    assert!(ks_uniform(data.y1().to_vec()) <= 0.02);
    assert!(ks_uniform(data.y2().to_vec()) <= 0.02);
}

#[test]
fn signal_pvalues_have_the_shifted_median() {
    let cfg = SimConfig { m: 10_000, ..SimConfig::default() };
    let truth = SimTruth { states: vec![StateCode::SIGNAL_SIGNAL; cfg.m] };
    let data = simulate_pvalues(&truth, &cfg, &mut rng(44)).unwrap();
    let target = normal_sf(2.0);
    assert!((median(data.y1().to_vec()) - target).abs() < 0.003);
    assert!((median(data.y2().to_vec()) - target).abs() < 0.003);
}

#[test]
fn same_seed_same_data() {
    let cfg = SimConfig { m: 5_000, seed: 9, ..SimConfig::default() };
    assert_eq!(simulate_replication(&cfg, 3).unwrap(), simulate_replication(&cfg, 3).unwrap());
    assert_ne!(simulate_replication(&cfg, 3).unwrap().1, simulate_replication(&cfg, 4).unwrap().1);
}

#[test]
fn identity_chain_is_not_simulated() {
    let cfg = SimConfig { transition: *TransitionMatrix::new([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]).unwrap().rows(), ..SimConfig::default() };
    assert!(simulate_states(&cfg, &mut rng(0)).is_err());
    assert!(cfg.validate().is_err());
}

#[test]
fn true_params_match_the_configuration() {
    let cfg = SimConfig::default();
    let p = true_params(&cfg).unwrap();
    let a = cfg.transition_matrix().unwrap();
    assert_eq!(p.pi, stationary_from_transition(&a).unwrap());
    assert!((p.f1.integral() - 1.0).abs() < 1e-9);
    // The step density tracks the exact likelihood ratio exp(μz − μ²/2).
    for y in [1e-6, 1e-3, 0.02, 0.3, 0.9] {
        let z = normal_isf(y);
        let exact = (2.0 * z - 2.0f64).exp();
        assert!((p.f1.eval(y) / exact - 1.0).abs() < 0.2, "y {y}: {} vs {exact}", p.f1.eval(y));
    }
}

fn small_eval(mu: f64) -> EvalReport {
    let cfg = SimConfig { m: 2_000, mu1: mu, mu2: mu, replications: 20, q_grid: vec![0.05, 0.1], ..SimConfig::default() };
    evaluate(&cfg, &Method::ALL).unwrap()
}

#[test]
fn evaluation_metrics_are_proportions_and_power_grows_with_signal() {
    let weak = small_eval(1.5);
    let strong = small_eval(2.5);
    assert_eq!(weak.cells.len(), Method::ALL.len() * 2);
    for c in weak.cells.iter().chain(&strong.cells) {
        assert!((0.0..=1.0).contains(&c.fdr) && (0.0..=1.0).contains(&c.power), "{c:?}");
        assert_eq!(c.n_reps + c.failures, 20);
    }
    for c in &strong.cells {
        let w = weak.cell(c.method, c.q).unwrap();
        assert!(c.power >= w.power, "{} at q = {}", c.method, c.q);
    }
}

#[test]
fn report_does_not_depend_on_thread_count() {
    let cfg = SimConfig { m: 1_000, replications: 8, ..SimConfig::default() };
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| evaluate(&cfg, &Method::ALL).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one.to_long_csv(), four.to_long_csv());
    assert_eq!(one, four);
}

#[test]
fn csv_shapes() {
    let cfg = SimConfig { m: 500, replications: 3, q_grid: vec![0.05, 0.1, 0.2], ..SimConfig::default() };
    let report = evaluate(&cfg, &[Method::Rlis, Method::Baseline(rephmm::BaselineMethod::MaxP)]).unwrap();
    let long = report.to_long_csv();
    let lines: Vec<&str> = long.lines().collect();
    assert_eq!(lines[0], "method,q,mu1,mu2,metric,value,stderr,n_reps");
    assert_eq!(lines.len(), 1 + 2 * 3 * 2);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 8));
    let curves = report.to_curves_csv();
    assert_eq!(curves.lines().count(), 1 + 2 * 3);
}

#[test]
fn unknown_config_keys_are_rejected() {
    assert!(serde_json::from_str::<SimConfig>(r#"{"m": 10, "bogus": 1}"#).is_err());
    let cfg: SimConfig = serde_json::from_str(r#"{"m": 10}"#).unwrap();
    assert_eq!(cfg.m, 10);
    assert_eq!(cfg.mu1, SimConfig::default().mu1);
}
