//! Monte Carlo study of empirical FDR and power.
//!
//! Hidden states follow the Markov chain started from its stationary
//! distribution. Given `θᵢⱼ`, the z-value is `N(θᵢⱼ μᵢ, σᵢ²)` and the
//! p-value is its upper-tail standard-normal probability.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::baselines::{self, BaselineMethod, JumpTuning};
use crate::em::{fit, EmConfig};
use crate::error::{Error, Result};
use crate::forward_backward::compute_rlis;
use crate::isotonic::{pava_nonincreasing, WeightedLevels};
use crate::model::{
    stationary_from_transition, HmmParams, PairedPValues, StateCode, StepDensity, TransitionMatrix, NUM_STATES,
};
use crate::testing::step_up;

/// First simulation matrix, stationary distribution ≈ (0.7, 0.1, 0.1, 0.1).
pub const TRANSITION_S1: [[f64; 4]; 4] = [
    [0.905, 0.032, 0.032, 0.032],
    [0.222, 0.333, 0.222, 0.222],
    [0.222, 0.222, 0.333, 0.222],
    [0.222, 0.222, 0.222, 0.333],
];

/// Second simulation matrix, stationary distribution ≈ (0.6, 0.15, 0.15, 0.1).
pub const TRANSITION_S2: [[f64; 4]; 4] = [
    [0.889, 0.037, 0.037, 0.037],
    [0.148, 0.556, 0.148, 0.148],
    [0.148, 0.148, 0.556, 0.148],
    [0.222, 0.222, 0.222, 0.333],
];

/// Upper-tail probability of the standard normal.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// `z` with `normal_sf(z) = p`.
pub fn normal_isf(p: f64) -> f64 {
    let n = Normal::standard();
    let mut z = if p < 0.5 { -n.inverse_cdf(p) } else { n.inverse_cdf(1.0 - p) };
    // Newton steps on log sf to reach full precision in the far tail.
    for _ in 0..2 {
        let sf = normal_sf(z);
        if !(sf > 0.0 && z.is_finite()) {
            break;
        }
        let log_pdf = -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln();
        z += (sf.ln() - p.ln()) * sf / log_pdf.exp();
    }
    z
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    S1,
    S2,
}

impl Scenario {
    pub fn rows(self) -> [[f64; 4]; 4] {
        match self {
            Scenario::S1 => TRANSITION_S1,
            Scenario::S2 => TRANSITION_S2,
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s1" => Ok(Scenario::S1),
            "s2" => Ok(Scenario::S2),
            other => Err(Error::Config(format!("unknown scenario '{other}' (expected s1 or s2)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub m: usize,
    /// Transition matrix rows; normalized to sum to one on use.
    pub transition: [[f64; 4]; 4],
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub q_grid: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    pub em: EmConfig,
    pub jump: JumpTuning,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            m: 10_000,
            transition: TRANSITION_S1,
            mu1: 2.0,
            mu2: 2.0,
            sigma1: 1.0,
            sigma2: 1.0,
            q_grid: vec![0.05],
            replications: 100,
            seed: 1,
            em: EmConfig::default(),
            jump: JumpTuning::default(),
        }
    }
}

impl SimConfig {
    /// Small preset for continuous integration: m = 2,000, 20 replications.
    pub fn desk() -> Self {
        SimConfig { m: 2_000, replications: 20, ..SimConfig::default() }
    }

    /// Full-size preset: m = 10,000, 100 replications.
    pub fn full() -> Self {
        SimConfig::default()
    }

    pub fn with_scenario(mut self, scenario: Scenario) -> Self {
        self.transition = scenario.rows();
        self
    }

    pub fn transition_matrix(&self) -> Result<TransitionMatrix> {
        TransitionMatrix::from_rows_normalized(self.transition)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if !(self.sigma1 > 0.0 && self.sigma2 > 0.0) {
            return Err(Error::Config("standard deviations must be positive".into()));
        }
        if !(self.mu1.is_finite() && self.mu2.is_finite()) {
            return Err(Error::Config("signal means must be finite".into()));
        }
        if let Some(&q) = self.q_grid.iter().find(|&&q| !(q > 0.0 && q < 1.0)) {
            return Err(Error::InvalidLevel(q));
        }
        self.em.validate()?;
        let a = self.transition_matrix()?;
        stationary_from_transition(&a)?;
        Ok(())
    }
}

/// Simulated hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub states: Vec<StateCode>,
}

impl SimTruth {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn theta1(&self) -> Vec<bool> {
        self.states.iter().map(|s| s.theta1()).collect()
    }

    pub fn theta2(&self) -> Vec<bool> {
        self.states.iter().map(|s| s.theta2()).collect()
    }

    pub fn num_signals(&self) -> usize {
        self.states.iter().filter(|s| !s.is_replicability_null()).count()
    }

    /// `(FDP, power)` of a rejection set, with `R ∨ 1` and `N₃ ∨ 1` denominators.
    pub fn fdp_and_power(&self, rejected: &[usize]) -> (f64, f64) {
        let false_rej = rejected.iter().filter(|&&j| self.states[j].is_replicability_null()).count();
        let true_rej = rejected.len() - false_rej;
        let fdp = false_rej as f64 / rejected.len().max(1) as f64;
        let power = true_rej as f64 / self.num_signals().max(1) as f64;
        (fdp, power)
    }
}

fn draw_state(rng: &mut impl Rng, probs: &[f64; NUM_STATES]) -> StateCode {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (s, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return StateCode::ALL[s];
        }
    }
    StateCode::ALL[NUM_STATES - 1]
}

/// Markov chain of `cfg.m` states started from the stationary distribution.
pub fn simulate_states(cfg: &SimConfig, rng: &mut impl Rng) -> Result<SimTruth> {
    let a = cfg.transition_matrix()?;
    let pi = stationary_from_transition(&a)?;
    let mut states = Vec::with_capacity(cfg.m);
    if cfg.m > 0 {
        let mut s = draw_state(rng, pi.probs());
        states.push(s);
        for _ in 1..cfg.m {
            s = draw_state(rng, &a.rows()[s.index()]);
            states.push(s);
        }
    }
    Ok(SimTruth { states })
}

fn pvalue_from_z(x: f64) -> f64 {
    normal_sf(x).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// One-sided p-values of `N(θ μ, σ²)` z-values.
pub fn simulate_pvalues(truth: &SimTruth, cfg: &SimConfig, rng: &mut impl Rng) -> Result<PairedPValues> {
    if truth.len() != cfg.m {
        return Err(Error::LengthMismatch(format!("{} states for m = {}", truth.len(), cfg.m)));
    }
    let mut y1 = Vec::with_capacity(cfg.m);
    let mut y2 = Vec::with_capacity(cfg.m);
    for s in &truth.states {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let x1 = if s.theta1() { cfg.mu1 + cfg.sigma1 * z1 } else { cfg.sigma1 * z1 };
        let x2 = if s.theta2() { cfg.mu2 + cfg.sigma2 * z2 } else { cfg.sigma2 * z2 };
        y1.push(pvalue_from_z(x1));
        y2.push(pvalue_from_z(x2));
    }
    PairedPValues::new(y1, y2)
}

/// Independent random stream for replication `rep`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Truth and data of one replication.
pub fn simulate_replication(cfg: &SimConfig, rep: u64) -> Result<(SimTruth, PairedPValues)> {
    let mut rng = replication_rng(cfg.seed, rep);
    let truth = simulate_states(cfg, &mut rng)?;
    let data = simulate_pvalues(&truth, cfg, &mut rng)?;
    Ok((truth, data))
}

/// Step approximation of the p-value density under `N(μ, σ²)` z-values.
///
/// Each cell carries its exact probability mass, so the result integrates
/// to one; a width-weighted monotone projection keeps the steps
/// non-increasing when `σ ≠ 1` breaks the likelihood-ratio ordering.
pub fn signal_pvalue_density(mu: f64, sigma: f64) -> Result<StepDensity> {
    let mut breaks = vec![0.0];
    let mut e = -14.0;
    while e < -2.0 {
        breaks.push(10f64.powf(e));
        e += 0.05;
    }
    for k in 10..=1000 {
        breaks.push(k as f64 / 1000.0);
    }
    breaks.dedup();
    // P(Y ≤ p) = P(X ≥ isf(p)) with X ~ N(μ, σ²).
    let cdf = |p: f64| {
        if p <= 0.0 {
            0.0
        } else if p >= 1.0 {
            1.0
        } else {
            normal_sf((normal_isf(p) - mu) / sigma)
        }
    };
    let widths: Vec<f64> = breaks.windows(2).map(|w| w[1] - w[0]).collect();
    let masses: Vec<f64> = breaks.windows(2).map(|w| cdf(w[1]) - cdf(w[0])).collect();
    let total: f64 = masses.iter().sum();
    let heights: Vec<f64> = masses.iter().zip(&widths).map(|(m, w)| m / total / w).collect();
    let heights = pava_nonincreasing(&WeightedLevels::new(heights, widths.clone())?);
    // Renormalize away the rounding of the projection.
    let mass: f64 = heights.iter().zip(&widths).map(|(h, w)| h * w).sum();
    StepDensity::new(breaks, heights.iter().map(|h| (h / mass).max(0.0)).collect())
}

/// Generating parameters of `cfg`, with the signal densities discretized.
pub fn true_params(cfg: &SimConfig) -> Result<HmmParams> {
    let a = cfg.transition_matrix()?;
    HmmParams::stationary(
        a,
        signal_pvalue_density(cfg.mu1, cfg.sigma1)?,
        signal_pvalue_density(cfg.mu2, cfg.sigma2)?,
    )
}

/// Procedures compared by [`evaluate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    /// rLIS step-up with estimated parameters.
    Rlis,
    /// rLIS step-up with the generating parameters.
    Oracle,
    Baseline(BaselineMethod),
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Rlis,
        Method::Oracle,
        Method::Baseline(BaselineMethod::AdHocBh),
        Method::Baseline(BaselineMethod::MaxP),
        Method::Baseline(BaselineMethod::RadjustAdaptive),
        Method::Baseline(BaselineMethod::Jump),
        Method::Baseline(BaselineMethod::Stareg),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rlis => "rlis",
            Method::Oracle => "oracle",
            Method::Baseline(b) => b.name(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// Per-replication outcome: `(FDP, power)` for each method × q, or the
/// failure message.
type CellResults = Vec<std::result::Result<(f64, f64), String>>;

fn run_replication(cfg: &SimConfig, methods: &[Method], oracle: Option<&HmmParams>, rep: u64) -> CellResults {
    let nq = cfg.q_grid.len();
    let (truth, data) = match simulate_replication(cfg, rep) {
        Ok(x) => x,
        Err(e) => return vec![Err(e.to_string()); methods.len() * nq],
    };
    let mut out = Vec::with_capacity(methods.len() * nq);
    for &method in methods {
        // Statistic-based methods fit once and reuse the fit across levels.
        let stat: Option<std::result::Result<Vec<f64>, String>> = match method {
            Method::Rlis => Some(
                fit(&data, &cfg.em)
                    .and_then(|f| compute_rlis(&f.params, &data))
                    .map_err(|e| e.to_string()),
            ),
            Method::Oracle => Some(match oracle {
                Some(p) => compute_rlis(p, &data).map_err(|e| e.to_string()),
                None => Err("oracle parameters unavailable".into()),
            }),
            Method::Baseline(BaselineMethod::Stareg) => Some(
                baselines::fit_stareg(&data, &cfg.em)
                    .map(|f| f.lfdr)
                    .map_err(|e| e.to_string()),
            ),
            Method::Baseline(_) => None,
        };
        for &q in &cfg.q_grid {
            let rejected = match (&stat, method) {
                (Some(Ok(s)), _) => Ok(step_up(s, q).rejected),
                (Some(Err(e)), _) => Err(e.clone()),
                (None, Method::Baseline(BaselineMethod::Jump)) => {
                    baselines::jump_with(&data, q, &cfg.jump).map(|o| o.rejected).map_err(|e| e.to_string())
                }
                (None, Method::Baseline(b)) => {
                    baselines::run_baseline(b, &data, q).map(|o| o.rejected).map_err(|e| e.to_string())
                }
                (None, _) => unreachable!("statistic methods handled above"),
            };
            out.push(rejected.map(|r| truth.fdp_and_power(&r)));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub method: Method,
    pub q: f64,
    pub fdr: f64,
    pub fdr_se: f64,
    pub power: f64,
    pub power_se: f64,
    /// Replications that completed.
    pub n_reps: usize,
    pub failures: usize,
}

impl EvalCell {
    pub fn is_complete(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mu1: f64,
    pub mu2: f64,
    pub cells: Vec<EvalCell>,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Runs `cfg.replications` replications of every method at every level.
///
/// Replications run in parallel; each uses its own random stream keyed by
/// `(seed, replication)`, and results are aggregated in replication order,
/// so the report does not depend on the number of threads.
pub fn evaluate(cfg: &SimConfig, methods: &[Method]) -> Result<EvalReport> {
    if methods.is_empty() {
        return Err(Error::Config("no methods selected".into()));
    }
    cfg.validate()?;
    let oracle = if methods.contains(&Method::Oracle) { Some(true_params(cfg)?) } else { None };
    let per_rep: Vec<CellResults> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|rep| run_replication(cfg, methods, oracle.as_ref(), rep))
        .collect();

    let nq = cfg.q_grid.len();
    let mut cells = Vec::with_capacity(methods.len() * nq);
    for (mi, &method) in methods.iter().enumerate() {
        for (qi, &q) in cfg.q_grid.iter().enumerate() {
            let idx = mi * nq + qi;
            let mut fdps = Vec::with_capacity(per_rep.len());
            let mut powers = Vec::with_capacity(per_rep.len());
            let mut failures = 0;
            for rep in &per_rep {
                match &rep[idx] {
                    Ok((fdp, power)) => {
                        fdps.push(*fdp);
                        powers.push(*power);
                    }
                    Err(_) => failures += 1,
                }
            }
            let (fdr, fdr_se) = mean_and_se(&fdps);
            let (power, power_se) = mean_and_se(&powers);
            cells.push(EvalCell { method, q, fdr, fdr_se, power, power_se, n_reps: fdps.len(), failures });
        }
    }
    Ok(EvalReport { mu1: cfg.mu1, mu2: cfg.mu2, cells })
}

impl EvalReport {
    pub fn cell(&self, method: Method, q: f64) -> Option<&EvalCell> {
        self.cells.iter().find(|c| c.method == method && c.q == q)
    }

    pub const LONG_HEADER: &'static str = "method,q,mu1,mu2,metric,value,stderr,n_reps";

    /// Long format: one row per method × level × metric.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(Self::LONG_HEADER);
        out.push('\n');
        self.write_long_rows(&mut out);
        out
    }

    /// Rows of [`EvalReport::to_long_csv`] without the header.
    pub fn write_long_rows(&self, out: &mut String) {
        for c in &self.cells {
            for (metric, value, se) in [("fdr", c.fdr, c.fdr_se), ("power", c.power, c.power_se)] {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    c.method, c.q, self.mu1, self.mu2, metric, value, se, c.n_reps
                );
            }
        }
    }

    /// Wide format for plotting FDR and power against the nominal level.
    pub fn to_curves_csv(&self) -> String {
        let mut out = String::from("method,q,fdr,fdr_se,power,power_se\n");
        for c in &self.cells {
            let _ = writeln!(out, "{},{},{},{},{},{}", c.method, c.q, c.fdr, c.fdr_se, c.power, c.power_se);
        }
        out
    }
}
