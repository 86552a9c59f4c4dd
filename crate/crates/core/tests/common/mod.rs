//! Brute-force references and random instance generators shared by the
//! integration tests.

#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rephmm::model::{
    stationary_from_transition, HmmParams, PairedPValues, StepDensity, TransitionMatrix, NUM_STATES,
};

pub type Row = [f64; NUM_STATES];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Posteriors by summing over all `4^m` state paths.
pub struct Enumerated {
    pub gamma: Vec<Row>,
    pub xi: Vec<[Row; NUM_STATES]>,
    pub log_likelihood: f64,
}

pub fn enumerate_posteriors(pi: &Row, a: &[Row; NUM_STATES], emissions: &[Row]) -> Enumerated {
    let m = emissions.len();
    let mut gamma = vec![[0.0; NUM_STATES]; m];
    let mut xi = vec![[[0.0; NUM_STATES]; NUM_STATES]; m.saturating_sub(1)];
    let mut total = 0.0;
    let mut path = vec![0usize; m];
    let count = NUM_STATES.pow(m as u32);
    for code in 0..count {
        let mut c = code;
        for s in path.iter_mut() {
            *s = c % NUM_STATES;
            c /= NUM_STATES;
        }
        let mut w = pi[path[0]] * emissions[0][path[0]];
        for j in 1..m {
            w *= a[path[j - 1]][path[j]] * emissions[j][path[j]];
        }
        total += w;
        for j in 0..m {
            gamma[j][path[j]] += w;
        }
        for j in 0..m.saturating_sub(1) {
            xi[j][path[j]][path[j + 1]] += w;
        }
    }
    gamma.iter_mut().flatten().for_each(|g| *g /= total);
    xi.iter_mut().flatten().flatten().for_each(|x| *x /= total);
    Enumerated { gamma, xi, log_likelihood: total.ln() }
}

/// Least-squares non-increasing fit by trying every partition into
/// contiguous blocks.
pub fn brute_force_pava(targets: &[f64], weights: &[f64]) -> Vec<f64> {
    let n = targets.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (n - 1)) {
        // Bit k set: a block ends after position k.
        let mut fitted = vec![0.0; n];
        let mut start = 0;
        let mut means = Vec::new();
        for k in 0..n {
            if k == n - 1 || mask & (1 << k) != 0 {
                let w: f64 = weights[start..=k].iter().sum();
                let s: f64 = (start..=k).map(|i| weights[i] * targets[i]).sum();
                let mean = s / w;
                fitted[start..=k].iter_mut().for_each(|f| *f = mean);
                means.push(mean);
                start = k + 1;
            }
        }
        if means.windows(2).any(|w| w[1] > w[0]) {
            continue;
        }
        let sse: f64 = (0..n).map(|i| weights[i] * (targets[i] - fitted[i]).powi(2)).sum();
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, fitted));
        }
    }
    best.expect("the single-block partition is always feasible").1
}

pub fn random_transition(rng: &mut impl Rng) -> TransitionMatrix {
    let mut rows = [[0.0; NUM_STATES]; NUM_STATES];
    for row in rows.iter_mut() {
        for x in row.iter_mut() {
            *x = rng.random_range(0.02..1.0);
        }
    }
    TransitionMatrix::from_rows_normalized(rows).unwrap()
}

/// Non-increasing step density with `1..=max_steps` steps.
pub fn random_density(rng: &mut impl Rng, max_steps: usize) -> StepDensity {
    let k = rng.random_range(1..=max_steps);
    let mut cuts: Vec<f64> = (0..k - 1).map(|_| rng.random_range(0.001..0.999)).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut breaks = vec![0.0];
    breaks.extend(cuts);
    breaks.push(1.0);
    let mut heights: Vec<f64> = (0..breaks.len() - 1).map(|_| rng.random_range(0.05..20.0)).collect();
    heights.sort_by(|a, b| b.total_cmp(a));
    let mass: f64 = heights.iter().zip(breaks.windows(2)).map(|(h, w)| h * (w[1] - w[0])).sum();
    StepDensity::new(breaks, heights.iter().map(|h| h / mass).collect()).unwrap()
}

pub fn random_params(rng: &mut impl Rng) -> HmmParams {
    let a = random_transition(rng);
    HmmParams::stationary(a, random_density(rng, 5), random_density(rng, 5)).unwrap()
}

pub fn random_pvalue(rng: &mut impl Rng) -> f64 {
    // Mix of tiny and ordinary values.
    if rng.random_bool(0.3) {
        10f64.powf(rng.random_range(-8.0..-1.0))
    } else {
        rng.random_range(1e-6..=1.0)
    }
}

pub fn random_pairs(rng: &mut impl Rng, m: usize) -> PairedPValues {
    let y1 = (0..m).map(|_| random_pvalue(rng)).collect();
    let y2 = (0..m).map(|_| random_pvalue(rng)).collect();
    PairedPValues::new(y1, y2).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Stationary vector by power iteration, independent of the linear solve.
pub fn power_iteration_stationary(a: &TransitionMatrix) -> Row {
    let mut v = [0.25; NUM_STATES];
    for _ in 0..100_000 {
        let next: Row = std::array::from_fn(|l| (0..NUM_STATES).map(|k| v[k] * a.get(k, l)).sum());
        let delta = max_abs_diff(&next, &v);
        v = next;
        if delta < 1e-16 {
            break;
        }
    }
    v
}

pub fn stationary(a: &TransitionMatrix) -> Row {
    *stationary_from_transition(a).unwrap().probs()
}
