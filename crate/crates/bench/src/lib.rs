//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rephmm::sim::{simulate_replication, true_params, SimConfig};
use rephmm::{HmmParams, PairedPValues};

/// Data of `m` features from the default generating process, with the true parameters.
pub fn simulated(m: usize, seed: u64) -> (HmmParams, PairedPValues) {
    let cfg = SimConfig { m, seed, ..SimConfig::default() };
    let (_, data) = simulate_replication(&cfg, 0).expect("default configuration simulates");
    (true_params(&cfg).expect("default configuration is valid"), data)
}

/// Random targets and positive weights for isotonic regression.
pub fn levels(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets = (0..n).map(|i| -(i as f64) * 1e-3 + rng.random_range(-1.0..1.0)).collect();
    let weights = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
    (targets, weights)
}
