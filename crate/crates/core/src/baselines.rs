//! Competing replicability procedures that ignore dependence between features.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::em::{floored_simplex_mle, initialize, EmConfig, SortedStudy};
use crate::error::{Error, Result};
use crate::forward_backward::EMISSION_FLOOR;
use crate::model::{PairedPValues, StepDensity, NUM_STATES};
use crate::testing::{ascending_order, check_level, step_up};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BaselineMethod {
    AdHocBh,
    MaxP,
    RadjustAdaptive,
    Jump,
    Stareg,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 5] = [
        BaselineMethod::AdHocBh,
        BaselineMethod::MaxP,
        BaselineMethod::RadjustAdaptive,
        BaselineMethod::Jump,
        BaselineMethod::Stareg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::AdHocBh => "adhoc_bh",
            BaselineMethod::MaxP => "maxp",
            BaselineMethod::RadjustAdaptive => "radjust",
            BaselineMethod::Jump => "jump",
            BaselineMethod::Stareg => "stareg",
        }
    }
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutcome {
    pub method: BaselineMethod,
    /// Rejected feature indices in ascending order.
    pub rejected: Vec<usize>,
    /// Per-feature test statistic when the method has one (y_max, Lfdr).
    pub statistic: Option<Vec<f64>>,
    /// Method-specific estimates and flags.
    pub auxiliary: BTreeMap<String, f64>,
}

impl BaselineOutcome {
    fn new(method: BaselineMethod, mut rejected: Vec<usize>) -> Self {
        rejected.sort_unstable();
        BaselineOutcome { method, rejected, statistic: None, auxiliary: BTreeMap::new() }
    }

    fn aux(mut self, key: &str, value: f64) -> Self {
        self.auxiliary.insert(key.to_string(), value);
        self
    }
}

/// Benjamini–Hochberg step-up: rejects the `k̂` smallest p-values, where
/// `k̂` is the largest `k` with `p₍ₖ₎ ≤ kq/m`. Indices are returned in
/// ascending p-value order.
pub fn bh(p: &[f64], q: f64) -> Vec<usize> {
    let m = p.len();
    let order = ascending_order(p);
    let k_hat = order
        .iter()
        .enumerate()
        .rev()
        .find(|(i, &j)| p[j] <= (i + 1) as f64 * q / m as f64)
        .map_or(0, |(i, _)| i + 1);
    order[..k_hat].to_vec()
}

fn intersect_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Features rejected by BH in both studies.
pub fn adhoc_bh(data: &PairedPValues, q: f64) -> Result<BaselineOutcome> {
    check_level(q)?;
    let mut r1 = bh(data.y1(), q);
    let mut r2 = bh(data.y2(), q);
    r1.sort_unstable();
    r2.sort_unstable();
    let both = intersect_sorted(&r1, &r2);
    Ok(BaselineOutcome::new(BaselineMethod::AdHocBh, both)
        .aux("rejected_study1", r1.len() as f64)
        .aux("rejected_study2", r2.len() as f64))
}

fn max_pvalues(data: &PairedPValues) -> Vec<f64> {
    data.y1().iter().zip(data.y2()).map(|(&a, &b)| a.max(b)).collect()
}

/// BH applied to `max(y1ⱼ, y2ⱼ)`.
pub fn maxp(data: &PairedPValues, q: f64) -> Result<BaselineOutcome> {
    check_level(q)?;
    let ymax = max_pvalues(data);
    let rejected = bh(&ymax, q);
    let mut out = BaselineOutcome::new(BaselineMethod::MaxP, rejected);
    out.statistic = Some(ymax);
    Ok(out)
}

/// Null-proportion estimate among features selected in the other study:
/// `(1 + #{j ∈ S_other : y_j > q}) / (|S_other| (1 − q))`.
pub fn radjust_pi0(y: &[f64], selected_other: &[usize], q: f64) -> f64 {
    let exceed = selected_other.iter().filter(|&&j| y[j] > q).count();
    (1.0 + exceed as f64) / (selected_other.len() as f64 * (1.0 - q))
}

/// Adaptive radjust with selection `S_{i,q} = {j : y_ij ≤ q}`.
pub fn radjust_adaptive(data: &PairedPValues, q: f64) -> Result<BaselineOutcome> {
    check_level(q)?;
    let (y1, y2) = (data.y1(), data.y2());
    let s1: Vec<usize> = (0..data.len()).filter(|&j| y1[j] <= q).collect();
    let s2: Vec<usize> = (0..data.len()).filter(|&j| y2[j] <= q).collect();
    if s1.is_empty() || s2.is_empty() {
        return Ok(BaselineOutcome::new(BaselineMethod::RadjustAdaptive, Vec::new()).aux("empty_selection", 1.0));
    }
    let pi0_1 = radjust_pi0(y1, &s2, q);
    let pi0_2 = radjust_pi0(y2, &s1, q);
    let both = intersect_sorted(&s1, &s2);
    let thresholds = |r: usize| {
        (
            r as f64 * q / (2.0 * s2.len() as f64 * pi0_1),
            r as f64 * q / (2.0 * s1.len() as f64 * pi0_2),
        )
    };
    let passing = |r: usize| {
        let (t1, t2) = thresholds(r);
        both.iter().filter(|&&j| y1[j] <= t1 && y2[j] <= t2).count()
    };
    let big_r = (1..=both.len()).rev().find(|&r| passing(r) == r).unwrap_or(0);
    let rejected = if big_r == 0 {
        Vec::new()
    } else {
        let (t1, t2) = thresholds(big_r);
        both.iter().copied().filter(|&j| y1[j] <= t1 && y2[j] <= t2).collect()
    };
    Ok(BaselineOutcome::new(BaselineMethod::RadjustAdaptive, rejected)
        .aux("pi0_1", pi0_1)
        .aux("pi0_2", pi0_2)
        .aux("selected_1", s1.len() as f64)
        .aux("selected_2", s2.len() as f64)
        .aux("empty_selection", 0.0))
}

/// Tuning thresholds of the JUMP null-proportion estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpTuning {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for JumpTuning {
    fn default() -> Self {
        JumpTuning { lambda1: 0.5, lambda2: 0.5, lambda3: 0.5 }
    }
}

/// Value clamped into [0, 1] and whether clamping was needed.
fn clamp_unit(x: f64) -> (f64, bool) {
    let c = x.clamp(0.0, 1.0);
    (c, c != x)
}

/// Storey's estimate `#{p ≥ λ} / (m (1 − λ))`, unclamped.
pub fn storey_pi0(p: &[f64], lambda: f64) -> f64 {
    let n = p.iter().filter(|&&x| x >= lambda).count();
    n as f64 / (p.len() as f64 * (1.0 - lambda))
}

/// `#{y1 ≥ λ, y2 ≥ λ} / (m (1 − λ)²)`, unclamped.
pub fn storey_xi00(data: &PairedPValues, lambda: f64) -> f64 {
    let n = data.y1().iter().zip(data.y2()).filter(|(&a, &b)| a >= lambda && b >= lambda).count();
    n as f64 / (data.len() as f64 * (1.0 - lambda).powi(2))
}

/// Plug-in estimates of the composite-null mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEstimates {
    pub pi0_1: f64,
    pub pi0_2: f64,
    pub xi00: f64,
    pub xi01: f64,
    pub xi10: f64,
    /// Number of estimates that had to be clamped into [0, 1].
    pub clamped: usize,
}

impl JumpEstimates {
    pub fn new(data: &PairedPValues, tuning: &JumpTuning) -> Self {
        let (pi0_1, c1) = clamp_unit(storey_pi0(data.y1(), tuning.lambda1));
        let (pi0_2, c2) = clamp_unit(storey_pi0(data.y2(), tuning.lambda2));
        let (xi00, c3) = clamp_unit(storey_xi00(data, tuning.lambda3));
        let (xi01, c4) = clamp_unit(pi0_1 - xi00);
        let (xi10, c5) = clamp_unit(pi0_2 - xi00);
        let clamped = [c1, c2, c3, c4, c5].iter().filter(|&&c| c).count();
        JumpEstimates { pi0_1, pi0_2, xi00, xi01, xi10, clamped }
    }

    /// `m (ξ₀₀ t² + ξ₀₁ t + ξ₁₀ t)`, the estimated number of null maxima at or below `t`.
    pub fn expected_null_count(&self, m: usize, t: f64) -> f64 {
        m as f64 * (self.xi00 * t * t + self.xi01 * t + self.xi10 * t)
    }
}

pub fn jump(data: &PairedPValues, q: f64) -> Result<BaselineOutcome> {
    jump_with(data, q, &JumpTuning::default())
}

/// JUMP: rejects the `k̂` smallest maxima, with `k̂` the largest `k` whose
/// estimated FDR at `t = y_max₍ₖ₎` is at most `q`.
pub fn jump_with(data: &PairedPValues, q: f64, tuning: &JumpTuning) -> Result<BaselineOutcome> {
    check_level(q)?;
    let est = JumpEstimates::new(data, tuning);
    let ymax = max_pvalues(data);
    let order = ascending_order(&ymax);
    let m = data.len();
    let mut k_hat = 0;
    let mut i = 0;
    while i < m {
        let t = ymax[order[i]];
        while i < m && ymax[order[i]] == t {
            i += 1;
        }
        // i = #{y_max ≤ t}
        let fdr = est.expected_null_count(m, t) / i as f64;
        if fdr <= q {
            k_hat = i;
        }
    }
    let mut out = BaselineOutcome::new(BaselineMethod::Jump, order[..k_hat].to_vec())
        .aux("pi0_1", est.pi0_1)
        .aux("pi0_2", est.pi0_2)
        .aux("xi00", est.xi00)
        .aux("xi01", est.xi01)
        .aux("xi10", est.xi10)
        .aux("clamped", est.clamped as f64);
    out.statistic = Some(ymax);
    Ok(out)
}

/// Four-group mixture with independent states, fitted by EM.
#[derive(Debug, Clone, PartialEq)]
pub struct StaregFit {
    /// Mixture weights `(ξ₀₀, ξ₀₁, ξ₁₀, ξ₁₁)` in state order.
    pub xi: [f64; NUM_STATES],
    pub f1: StepDensity,
    pub f2: StepDensity,
    pub lfdr: Vec<f64>,
    /// Posterior probability of state 3 per feature.
    pub posterior_signal: Vec<f64>,
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
}

/// EM for the independent four-group model, sharing the monotone-density
/// M-step with the Markov fit.
pub fn fit_stareg(data: &PairedPValues, cfg: &EmConfig) -> Result<StaregFit> {
    cfg.validate()?;
    let start = initialize(data, &EmConfig { init: crate::em::Initializer::Moment, ..cfg.clone() })?;
    let mut xi = *start.pi.probs();
    let mut f1 = start.f1;
    let mut f2 = start.f2;
    let study1 = SortedStudy::new(data.y1());
    let study2 = SortedStudy::new(data.y2());
    let m = data.len();

    let mut trace = Vec::new();
    let mut converged = false;
    let mut post = vec![[0.0; NUM_STATES]; m];
    let mut null_mass = vec![0.0; m];
    let mut iteration = 0;
    loop {
        let mut ll = 0.0;
        for j in 0..m {
            let g1 = f1.eval(data.y1()[j]);
            let g2 = f2.eval(data.y2()[j]);
            let e = [1.0, g2, g1, g1 * g2];
            let w: [f64; NUM_STATES] = std::array::from_fn(|s| xi[s] * e[s].max(EMISSION_FLOOR));
            let total: f64 = w.iter().sum();
            if !(total > 0.0) {
                return Err(Error::ZeroLikelihood { index: j });
            }
            ll += total.ln();
            post[j] = w.map(|x| x / total);
            null_mass[j] = (w[0] + w[1] + w[2]) / total;
        }
        if !ll.is_finite() {
            return Err(Error::NonFiniteLikelihood { iteration });
        }
        let prev = trace.last().copied();
        trace.push(ll);
        if let Some(prev) = prev {
            if (ll - prev).abs() / (1.0 + ll.abs()) < cfg.rel_tol {
                converged = true;
                break;
            }
        }
        if iteration == cfg.max_iterations {
            break;
        }
        let mut counts = [0.0; NUM_STATES];
        for p in &post {
            for s in 0..NUM_STATES {
                counts[s] += p[s];
            }
        }
        xi = floored_simplex_mle(&counts, cfg.prob_floor);
        let (n1, n2) = crate::em::update_densities(&post, &study1, &study2)?;
        f1 = n1;
        f2 = n2;
        iteration += 1;
    }
    Ok(StaregFit {
        xi,
        f1,
        f2,
        lfdr: null_mass,
        posterior_signal: post.iter().map(|p| p[3]).collect(),
        log_likelihood_trace: trace,
        converged,
    })
}

pub fn stareg(data: &PairedPValues, q: f64) -> Result<BaselineOutcome> {
    stareg_with(data, q, &EmConfig::default())
}

/// Lfdr step-up on the independent four-group fit.
pub fn stareg_with(data: &PairedPValues, q: f64, cfg: &EmConfig) -> Result<BaselineOutcome> {
    check_level(q)?;
    let fit = fit_stareg(data, cfg)?;
    Ok(stareg_outcome(&fit, q))
}

/// Applies the Lfdr step-up of an existing fit at level `q`.
pub fn stareg_outcome(fit: &StaregFit, q: f64) -> BaselineOutcome {
    let outcome = step_up(&fit.lfdr, q);
    let mut out = BaselineOutcome::new(BaselineMethod::Stareg, outcome.rejected)
        .aux("xi00", fit.xi[0])
        .aux("xi01", fit.xi[1])
        .aux("xi10", fit.xi[2])
        .aux("xi11", fit.xi[3])
        .aux("iterations", (fit.log_likelihood_trace.len() - 1) as f64)
        .aux("converged", fit.converged as u8 as f64);
    out.statistic = Some(fit.lfdr.clone());
    out
}

/// Runs one baseline with default settings.
pub fn run_baseline(method: BaselineMethod, data: &PairedPValues, q: f64) -> Result<BaselineOutcome> {
    match method {
        BaselineMethod::AdHocBh => adhoc_bh(data, q),
        BaselineMethod::MaxP => maxp(data, q),
        BaselineMethod::RadjustAdaptive => radjust_adaptive(data, q),
        BaselineMethod::Jump => jump(data, q),
        BaselineMethod::Stareg => stareg(data, q),
    }
}
