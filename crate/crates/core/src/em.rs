//! Nonparametric maximum-likelihood estimation of `(π, A, f₁, f₂)` by EM.
//!
//! Each iteration runs a forward-backward pass (E-step), then updates
//! `π` from the first-position posterior, every row of `A` from the summed
//! pairwise posteriors, and `f₁`, `f₂` by the monotone-density update with
//! weights `γ(2) + γ(3)` on study 1 and `γ(1) + γ(3)` on study 2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward_backward::{forward_backward, PosteriorTables, EMISSION_FLOOR};
use crate::isotonic::grenander_update;
use crate::model::{
    stationary_from_transition, HmmParams, PairedPValues, StationaryDist, StepDensity, TransitionMatrix,
    NUM_STATES,
};

/// Threshold separating "small" p-values in the moment initializer.
const INIT_THRESHOLD: f64 = 0.05;
/// Per-cell floor of the initial state proportions.
const INIT_CELL_FLOOR: f64 = 0.02;
/// Weight on the identity in the initial transition matrix.
const INIT_PERSISTENCE: f64 = 0.7;

/// How the starting point of EM is chosen.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Initializer {
    /// Moment-based start from the fractions of small p-values.
    #[default]
    Moment,
    /// Start from the given parameters.
    Params(Box<HmmParams>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Stop when `|Δ log-lik| / (1 + |log-lik|)` falls below this.
    pub rel_tol: f64,
    #[serde(skip)]
    pub init: Initializer,
    pub store_trace: bool,
    /// Smallest admissible number of features.
    pub min_features: usize,
    /// Lower bound on every entry of `π` and `A` during M-steps.
    pub prob_floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iterations: 200,
            rel_tol: 1e-6,
            init: Initializer::Moment,
            store_trace: true,
            min_features: 100,
            prob_floor: 1e-8,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config("rel_tol must be positive".into()));
        }
        if !(self.prob_floor >= 0.0 && self.prob_floor * (NUM_STATES as f64) < 1.0) {
            return Err(Error::Config("prob_floor must lie in [0, 1/4)".into()));
        }
        Ok(())
    }
}

/// Result of [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub params: HmmParams,
    /// Observed-data log-likelihood of each evaluated iterate.
    pub log_likelihood_trace: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
}

impl EmFit {
    pub fn final_log_likelihood(&self) -> f64 {
        self.log_likelihood_trace.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Serialize, Deserialize)]
struct EmFitDoc {
    #[serde(flatten)]
    params: HmmParams,
    trace: Vec<f64>,
    converged: bool,
    iterations: usize,
}

impl Serialize for EmFit {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        EmFitDoc {
            params: self.params.clone(),
            trace: self.log_likelihood_trace.clone(),
            converged: self.converged,
            iterations: self.iterations_used,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EmFit {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = EmFitDoc::deserialize(deserializer)?;
        Ok(EmFit {
            params: doc.params,
            log_likelihood_trace: doc.trace,
            iterations_used: doc.iterations,
            converged: doc.converged,
        })
    }
}

/// Maximizes `Σ c_l log a_l` over the probability simplex restricted to
/// `a_l ≥ floor`. The solution is `a_l = max(floor, c_l / λ)`; entries are
/// pinned at the floor until the remaining mass is shared in proportion to
/// the counts.
pub fn floored_simplex_mle(counts: &[f64; NUM_STATES], floor: f64) -> [f64; NUM_STATES] {
    let mut pinned = [false; NUM_STATES];
    loop {
        let n_pinned = pinned.iter().filter(|&&p| p).count();
        let free_mass = 1.0 - floor * n_pinned as f64;
        let free_total: f64 = (0..NUM_STATES).filter(|&l| !pinned[l]).map(|l| counts[l]).sum();
        let n_free = NUM_STATES - n_pinned;
        let out: [f64; NUM_STATES] = std::array::from_fn(|l| {
            if pinned[l] {
                floor
            } else if free_total > 0.0 {
                counts[l] * free_mass / free_total
            } else {
                free_mass / n_free as f64
            }
        });
        let mut changed = false;
        for l in 0..NUM_STATES {
            if !pinned[l] && out[l] < floor {
                pinned[l] = true;
                changed = true;
            }
        }
        if !changed {
            return out;
        }
    }
}

/// Moment-based starting values.
///
/// Cross-classifies features by `y1 < 0.05` and `y2 < 0.05` into the four
/// states, floors every cell at 0.02, sets `A = 0.7 I + 0.3 (1 π′)` and
/// starts both signal densities at the two-step density with heights
/// `(4, 0.25)` on `(0, 0.2]`, `(0.2, 1]`.
pub fn initialize(data: &PairedPValues, cfg: &EmConfig) -> Result<HmmParams> {
    if let Initializer::Params(p) = &cfg.init {
        return Ok((**p).clone());
    }
    let m = data.len();
    if m < cfg.min_features || m == 0 {
        return Err(Error::TooFewFeatures { m, min: cfg.min_features.max(1) });
    }
    let mut counts = [0.0; NUM_STATES];
    for (&y1, &y2) in data.y1().iter().zip(data.y2()) {
        let s = 2 * (y1 < INIT_THRESHOLD) as usize + (y2 < INIT_THRESHOLD) as usize;
        counts[s] += 1.0;
    }
    let pi = floored_simplex_mle(&counts, INIT_CELL_FLOOR);
    let rows: [[f64; NUM_STATES]; NUM_STATES] = std::array::from_fn(|k| {
        let mut row: [f64; NUM_STATES] = std::array::from_fn(|l| (1.0 - INIT_PERSISTENCE) * pi[l]);
        row[k] += INIT_PERSISTENCE;
        let sum: f64 = row.iter().sum();
        row.map(|x| x / sum)
    });
    let f0 = initial_signal_density();
    Ok(HmmParams {
        pi: StationaryDist::new(pi)?,
        a: TransitionMatrix::new(rows)?,
        f1: f0.clone(),
        f2: f0,
    })
}

fn initial_signal_density() -> StepDensity {
    StepDensity::new(vec![0.0, 0.2, 1.0], vec![4.0, 0.25]).expect("valid initial density")
}

/// One study's p-values in ascending order, with the permutation that
/// gathers weights into the same order.
#[derive(Debug, Clone)]
pub(crate) struct SortedStudy {
    order: Vec<usize>,
    sorted: Vec<f64>,
}

impl SortedStudy {
    pub(crate) fn new(p: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&i, &j| p[i].total_cmp(&p[j]).then(i.cmp(&j)));
        let sorted = order.iter().map(|&i| p[i]).collect();
        SortedStudy { order, sorted }
    }

    pub(crate) fn update(&self, weight: impl Fn(usize) -> f64) -> Result<StepDensity> {
        let w: Vec<f64> = self.order.iter().map(|&j| weight(j)).collect();
        grenander_update(&self.sorted, &w)
    }
}

/// Updates both signal densities from state posteriors.
pub(crate) fn update_densities(
    gamma: &[[f64; NUM_STATES]],
    study1: &SortedStudy,
    study2: &SortedStudy,
) -> Result<(StepDensity, StepDensity)> {
    let (f1, f2) = rayon::join(
        || study1.update(|j| gamma[j][2] + gamma[j][3]),
        || study2.update(|j| gamma[j][1] + gamma[j][3]),
    );
    Ok((f1?, f2?))
}

/// Initial-state update `π_s = γ₁(s)`, floored.
pub fn update_initial(post: &PosteriorTables, floor: f64) -> [f64; NUM_STATES] {
    floored_simplex_mle(&post.gamma[0], floor)
}

/// Transition update `a_kl ∝ Σⱼ ξⱼ(k, l)`, floored row by row.
pub fn update_transition(post: &PosteriorTables, floor: f64) -> [[f64; NUM_STATES]; NUM_STATES] {
    let counts = transition_counts(post);
    std::array::from_fn(|k| floored_simplex_mle(&counts[k], floor))
}

/// `Σⱼ ξⱼ(k, l)`.
pub fn transition_counts(post: &PosteriorTables) -> [[f64; NUM_STATES]; NUM_STATES] {
    let mut counts = [[0.0; NUM_STATES]; NUM_STATES];
    if let Some(xi) = &post.xi {
        for slice in xi {
            for k in 0..NUM_STATES {
                for l in 0..NUM_STATES {
                    counts[k][l] += slice[k][l];
                }
            }
        }
    }
    counts
}

fn xlogy(w: f64, y: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        w * y.ln()
    }
}

/// Expected complete-data log-likelihood `D(φ | φ⁽ᵗ⁾)` of `params` under the
/// posteriors computed at `φ⁽ᵗ⁾`.
pub fn d_objective(params: &HmmParams, posteriors: &PosteriorTables, data: &PairedPValues) -> f64 {
    let mut d: f64 = (0..NUM_STATES).map(|s| xlogy(posteriors.gamma[0][s], params.pi.get(s))).sum();
    if let Some(xi) = &posteriors.xi {
        for slice in xi {
            for k in 0..NUM_STATES {
                for l in 0..NUM_STATES {
                    d += xlogy(slice[k][l], params.a.get(k, l));
                }
            }
        }
    }
    for (j, g) in posteriors.gamma.iter().enumerate() {
        let e = params.emissions(data.y1()[j], data.y2()[j]);
        d += (0..NUM_STATES).map(|s| xlogy(g[s], e[s])).sum::<f64>();
    }
    d
}

/// Runs EM to convergence.
///
/// The returned `π` is the stationary distribution of the final `A`, not
/// the last first-position update.
pub fn fit(data: &PairedPValues, cfg: &EmConfig) -> Result<EmFit> {
    cfg.validate()?;
    let m = data.len();
    if m < cfg.min_features || m == 0 {
        return Err(Error::TooFewFeatures { m, min: cfg.min_features.max(1) });
    }
    let mut params = initialize(data, cfg)?;
    let study1 = SortedStudy::new(data.y1());
    let study2 = SortedStudy::new(data.y2());

    let mut trace = Vec::new();
    let mut prev_ll = f64::NAN;
    let mut converged = false;
    let mut iterations = 0;

    loop {
        let emissions: Vec<[f64; NUM_STATES]> = data
            .y1()
            .iter()
            .zip(data.y2())
            .map(|(&y1, &y2)| params.emissions(y1, y2).map(|e| e.max(EMISSION_FLOOR)))
            .collect();
        let post = forward_backward(params.pi.probs(), params.a.rows(), &emissions, true)?;
        let ll = post.log_likelihood;
        if !ll.is_finite() {
            return Err(Error::NonFiniteLikelihood { iteration: iterations });
        }
        if cfg.store_trace || trace.is_empty() {
            trace.push(ll);
        } else {
            trace[0] = ll;
        }
        if iterations > 0 && (ll - prev_ll).abs() / (1.0 + ll.abs()) < cfg.rel_tol {
            converged = true;
            break;
        }
        if iterations == cfg.max_iterations {
            break;
        }
        prev_ll = ll;

        let pi = update_initial(&post, cfg.prob_floor);
        let a = update_transition(&post, cfg.prob_floor);
        let (f1, f2) = update_densities(&post.gamma, &study1, &study2)?;
        params = HmmParams {
            pi: StationaryDist::new_unchecked(pi),
            a: TransitionMatrix::new_unchecked(a),
            f1,
            f2,
        };
        iterations += 1;
    }

    // Rows come from the floored simplex, so they are valid probabilities
    // up to rounding; renormalize before the eigen solve.
    let a = TransitionMatrix::from_rows_normalized(*params.a.rows())?;
    let pi = stationary_from_transition(&a)?;
    let params = HmmParams::new(pi, a, params.f1, params.f2)?;
    Ok(EmFit { params, log_likelihood_trace: trace, iterations_used: iterations, converged })
}
