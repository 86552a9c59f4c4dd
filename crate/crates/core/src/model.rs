//! Domain types of the four-state replicability model.
//!
//! A feature's joint state `s` encodes the association status in both
//! studies, `(θ₁, θ₂) = (0,0), (0,1), (1,0), (1,1)` for `s = 0, 1, 2, 3`.
//! States follow a stationary Markov chain along the feature order, and
//! given the state the two p-values are independent draws from either the
//! Uniform(0,1) null or a non-increasing signal density (`f1` for study 1,
//! `f2` for study 2).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of joint hidden states.
pub const NUM_STATES: usize = 4;

/// Tolerance for probability vectors and transition rows summing to one.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Tolerance on `‖πA − π‖∞`.
pub const STATIONARY_TOL: f64 = 1e-8;

/// Tolerance on the total mass of a [`StepDensity`].
pub const DENSITY_MASS_TOL: f64 = 1e-10;

/// Default replacement for p-values that are exactly zero.
pub const DEFAULT_P_FLOOR: f64 = 1e-15;

/// Joint association status of one feature across the two studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateCode(u8);

impl StateCode {
    pub const NULL_NULL: StateCode = StateCode(0);
    pub const NULL_SIGNAL: StateCode = StateCode(1);
    pub const SIGNAL_NULL: StateCode = StateCode(2);
    pub const SIGNAL_SIGNAL: StateCode = StateCode(3);

    pub const ALL: [StateCode; NUM_STATES] = [
        StateCode::NULL_NULL,
        StateCode::NULL_SIGNAL,
        StateCode::SIGNAL_NULL,
        StateCode::SIGNAL_SIGNAL,
    ];

    pub fn new(value: u8) -> Option<StateCode> {
        (value < NUM_STATES as u8).then_some(StateCode(value))
    }

    pub fn from_thetas(theta1: bool, theta2: bool) -> StateCode {
        StateCode(2 * theta1 as u8 + theta2 as u8)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Signal status in study 1.
    pub fn theta1(self) -> bool {
        self.0 >= 2
    }

    /// Signal status in study 2.
    pub fn theta2(self) -> bool {
        self.0 & 1 == 1
    }

    /// True for the three states forming the composite replicability null.
    pub fn is_replicability_null(self) -> bool {
        self.0 != 3
    }
}

/// Row-stochastic 4×4 transition matrix, `a[k][l] = P(s_{j+1} = l | s_j = k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix([[f64; NUM_STATES]; NUM_STATES]);

impl TransitionMatrix {
    /// Builds a matrix after checking entries and row sums.
    pub fn new(rows: [[f64; NUM_STATES]; NUM_STATES]) -> Result<Self> {
        let a = TransitionMatrix(rows);
        match a.violations().into_iter().next() {
            None => Ok(a),
            Some(v) => Err(Error::InvalidTransition(v.to_string())),
        }
    }

    /// Wraps rows without validation; see [`validate_params`].
    pub fn new_unchecked(rows: [[f64; NUM_STATES]; NUM_STATES]) -> Self {
        TransitionMatrix(rows)
    }

    /// Divides every row by its sum, for matrices whose entries were rounded.
    pub fn from_rows_normalized(rows: [[f64; NUM_STATES]; NUM_STATES]) -> Result<Self> {
        let mut out = rows;
        for (k, row) in out.iter_mut().enumerate() {
            if row.iter().any(|&x| !x.is_finite() || x < 0.0) {
                return Err(Error::InvalidTransition(format!("row {k} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 {
                return Err(Error::InvalidTransition(format!("row {k} sums to zero")));
            }
            row.iter_mut().for_each(|x| *x /= sum);
        }
        TransitionMatrix::new(out)
    }

    pub fn uniform() -> Self {
        TransitionMatrix([[0.25; NUM_STATES]; NUM_STATES])
    }

    /// Transition matrix of an i.i.d. state sequence: every row equals `pi`.
    pub fn independent(pi: &StationaryDist) -> Self {
        TransitionMatrix([*pi.probs(); NUM_STATES])
    }

    pub fn rows(&self) -> &[[f64; NUM_STATES]; NUM_STATES] {
        &self.0
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.0[from][to]
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (row, r) in self.0.iter().enumerate() {
            for (col, &value) in r.iter().enumerate() {
                if !(0.0..=1.0).contains(&value) {
                    out.push(Violation::TransitionEntry { row, col, value });
                }
            }
            let sum: f64 = r.iter().sum();
            if !((sum - 1.0).abs() <= PROB_SUM_TOL) {
                out.push(Violation::TransitionRowSum { row, sum });
            }
        }
        out
    }

    fn reachable_from(&self, start: usize) -> [bool; NUM_STATES] {
        let mut seen = [false; NUM_STATES];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(k) = stack.pop() {
            for l in 0..NUM_STATES {
                if self.0[k][l] > 0.0 && !seen[l] {
                    seen[l] = true;
                    stack.push(l);
                }
            }
        }
        seen
    }

    /// Every state can reach every other state through positive transitions.
    pub fn is_irreducible(&self) -> bool {
        (0..NUM_STATES).all(|k| self.reachable_from(k).iter().all(|&r| r))
    }

    /// Some power of the matrix is entrywise positive (irreducible and
    /// aperiodic). For n states it suffices to check powers up to
    /// `(n − 1)² + 1`.
    pub fn is_primitive(&self) -> bool {
        let support: [[bool; NUM_STATES]; NUM_STATES] =
            std::array::from_fn(|k| std::array::from_fn(|l| self.0[k][l] > 0.0));
        let mut power = support;
        let max_power = (NUM_STATES - 1) * (NUM_STATES - 1) + 1;
        for _ in 1..max_power {
            if power.iter().flatten().all(|&b| b) {
                return true;
            }
            power = std::array::from_fn(|k| {
                std::array::from_fn(|l| (0..NUM_STATES).any(|t| power[k][t] && support[t][l]))
            });
        }
        power.iter().flatten().all(|&b| b)
    }
}

/// Probability vector over the four joint states.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDist([f64; NUM_STATES]);

impl StationaryDist {
    pub fn new(probs: [f64; NUM_STATES]) -> Result<Self> {
        let d = StationaryDist(probs);
        match d.violations().into_iter().next() {
            None => Ok(d),
            Some(v) => Err(Error::InvalidDistribution(v.to_string())),
        }
    }

    pub fn new_unchecked(probs: [f64; NUM_STATES]) -> Self {
        StationaryDist(probs)
    }

    pub fn uniform() -> Self {
        StationaryDist([0.25; NUM_STATES])
    }

    pub fn probs(&self) -> &[f64; NUM_STATES] {
        &self.0
    }

    pub fn get(&self, s: usize) -> f64 {
        self.0[s]
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (index, &value) in self.0.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                out.push(Violation::DistributionEntry { index, value });
            }
        }
        let sum: f64 = self.0.iter().sum();
        if !((sum - 1.0).abs() <= PROB_SUM_TOL) {
            out.push(Violation::DistributionSum { sum });
        }
        out
    }
}

/// Non-increasing piecewise-constant density on (0, 1].
///
/// `breakpoints` is `0 = b₀ < b₁ < … < b_K = 1` and `heights[k]` is the value
/// on `(b_k, b_{k+1}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDensity {
    breakpoints: Vec<f64>,
    heights: Vec<f64>,
}

impl StepDensity {
    pub fn new(breakpoints: Vec<f64>, heights: Vec<f64>) -> Result<Self> {
        let d = StepDensity { breakpoints, heights };
        match d.problems().into_iter().next() {
            None => Ok(d),
            Some(p) => Err(Error::InvalidDensity(p.to_string())),
        }
    }

    pub fn new_unchecked(breakpoints: Vec<f64>, heights: Vec<f64>) -> Self {
        StepDensity { breakpoints, heights }
    }

    /// The Uniform(0,1) density, `f₀`.
    pub fn uniform() -> Self {
        StepDensity { breakpoints: vec![0.0, 1.0], heights: vec![1.0] }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn num_steps(&self) -> usize {
        self.heights.len()
    }

    /// Density at `y`. Steps are closed on the right: `y ∈ (b_{k-1}, b_k]`
    /// maps to the k-th height. Returns 0 outside (0, 1].
    pub fn eval(&self, y: f64) -> f64 {
        if !(y > 0.0 && y <= 1.0) {
            return 0.0;
        }
        let k = self.breakpoints[1..].partition_point(|&b| b < y);
        self.heights[k.min(self.heights.len() - 1)]
    }

    pub fn try_eval(&self, y: f64) -> Result<f64> {
        if y > 0.0 && y <= 1.0 {
            Ok(self.eval(y))
        } else {
            Err(Error::Domain { value: y })
        }
    }

    /// Cumulative distribution function.
    pub fn cdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for (k, &h) in self.heights.iter().enumerate() {
            let (lo, hi) = (self.breakpoints[k], self.breakpoints[k + 1]);
            if y >= hi {
                acc += h * (hi - lo);
            } else {
                acc += h * (y - lo);
                break;
            }
        }
        acc
    }

    /// Total mass `Σ h_k (b_k − b_{k−1})`.
    pub fn integral(&self) -> f64 {
        self.heights
            .iter()
            .zip(self.breakpoints.windows(2))
            .map(|(h, w)| h * (w[1] - w[0]))
            .sum()
    }

    fn problems(&self) -> Vec<DensityProblem> {
        let b = &self.breakpoints;
        let h = &self.heights;
        let mut out = Vec::new();
        if b.len() < 2 || b.len() != h.len() + 1 {
            out.push(DensityProblem::Shape { breakpoints: b.len(), heights: h.len() });
            return out;
        }
        if b[0] != 0.0 || b[b.len() - 1] != 1.0 {
            out.push(DensityProblem::Support);
        }
        if let Some(index) = b.windows(2).position(|w| !(w[1] > w[0])) {
            out.push(DensityProblem::Breakpoints { index: index + 1 });
        }
        if let Some(index) = h.iter().position(|&x| !x.is_finite() || x < 0.0) {
            out.push(DensityProblem::Negative { index });
        }
        if let Some(index) = h.windows(2).position(|w| w[1] > w[0]) {
            out.push(DensityProblem::Increasing { index: index + 1 });
        }
        let integral = self.integral();
        if !((integral - 1.0).abs() <= DENSITY_MASS_TOL) {
            out.push(DensityProblem::Mass { integral });
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DensityProblem {
    Shape { breakpoints: usize, heights: usize },
    Support,
    Breakpoints { index: usize },
    Negative { index: usize },
    Increasing { index: usize },
    Mass { integral: f64 },
}

impl fmt::Display for DensityProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DensityProblem::Shape { breakpoints, heights } => {
                write!(f, "{breakpoints} breakpoints do not bound {heights} steps")
            }
            DensityProblem::Support => write!(f, "breakpoints must start at 0 and end at 1"),
            DensityProblem::Breakpoints { index } => {
                write!(f, "breakpoint {index} is not strictly increasing")
            }
            DensityProblem::Negative { index } => write!(f, "height {index} is negative or non-finite"),
            DensityProblem::Increasing { index } => {
                write!(f, "height {index} exceeds its predecessor (density must be non-increasing)")
            }
            DensityProblem::Mass { integral } => write!(f, "density integrates to {integral}, not 1"),
        }
    }
}

/// Invariant violation reported by [`validate_params`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TransitionEntry { row: usize, col: usize, value: f64 },
    TransitionRowSum { row: usize, sum: f64 },
    Reducible,
    DistributionEntry { index: usize, value: f64 },
    DistributionSum { sum: f64 },
    NotStationary { residual: f64 },
    Density { which: &'static str, problem: DensityProblem },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TransitionEntry { row, col, value } => {
                write!(f, "transition entry ({row}, {col}) = {value} is not a probability")
            }
            Violation::TransitionRowSum { row, sum } => {
                write!(f, "transition row {row} sums to {sum}")
            }
            Violation::Reducible => write!(f, "transition matrix is reducible"),
            Violation::DistributionEntry { index, value } => {
                write!(f, "pi[{index}] = {value} is not a probability")
            }
            Violation::DistributionSum { sum } => write!(f, "pi sums to {sum}"),
            Violation::NotStationary { residual } => {
                write!(f, "pi is not stationary for A: max |piA - pi| = {residual:e}")
            }
            Violation::Density { which, problem } => write!(f, "{which}: {problem}"),
        }
    }
}

/// The model parameters `(π, A, f₁, f₂)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ParamsDoc", try_from = "ParamsDoc")]
pub struct HmmParams {
    pub pi: StationaryDist,
    pub a: TransitionMatrix,
    pub f1: StepDensity,
    pub f2: StepDensity,
}

impl HmmParams {
    /// Builds and validates.
    pub fn new(pi: StationaryDist, a: TransitionMatrix, f1: StepDensity, f2: StepDensity) -> Result<Self> {
        let p = HmmParams { pi, a, f1, f2 };
        match validate_params(&p).into_iter().next() {
            None => Ok(p),
            Some(v) => Err(Error::Config(v.to_string())),
        }
    }

    /// Chain with transition matrix `a`, its stationary distribution, and
    /// the given signal densities.
    pub fn stationary(a: TransitionMatrix, f1: StepDensity, f2: StepDensity) -> Result<Self> {
        let pi = stationary_from_transition(&a)?;
        HmmParams::new(pi, a, f1, f2)
    }

    /// The four state-conditional joint densities at `(y1, y2)`.
    ///
    /// `f⁽⁰⁾ = f₀f₀`, `f⁽¹⁾ = f₀f₂`, `f⁽²⁾ = f₁f₀`, `f⁽³⁾ = f₁f₂` with f₀ ≡ 1.
    pub fn emissions(&self, y1: f64, y2: f64) -> [f64; NUM_STATES] {
        let g1 = self.f1.eval(y1);
        let g2 = self.f2.eval(y2);
        [1.0, g2, g1, g1 * g2]
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsDoc {
    pi: [f64; NUM_STATES],
    #[serde(rename = "A")]
    a: [[f64; NUM_STATES]; NUM_STATES],
    f1: StepDensity,
    f2: StepDensity,
}

impl From<HmmParams> for ParamsDoc {
    fn from(p: HmmParams) -> Self {
        ParamsDoc { pi: p.pi.0, a: p.a.0, f1: p.f1, f2: p.f2 }
    }
}

impl TryFrom<ParamsDoc> for HmmParams {
    type Error = Error;

    fn try_from(doc: ParamsDoc) -> Result<Self> {
        HmmParams::new(
            StationaryDist(doc.pi),
            TransitionMatrix(doc.a),
            StepDensity::new(doc.f1.breakpoints, doc.f1.heights)?,
            StepDensity::new(doc.f2.breakpoints, doc.f2.heights)?,
        )
    }
}

/// Every violated invariant of `p`; empty iff the parameters are valid.
pub fn validate_params(p: &HmmParams) -> Vec<Violation> {
    let mut out = p.a.violations();
    let a_ok = out.is_empty();
    if a_ok && !p.a.is_irreducible() {
        out.push(Violation::Reducible);
    }
    let pi_violations = p.pi.violations();
    let pi_ok = pi_violations.is_empty();
    out.extend(pi_violations);
    if a_ok && pi_ok {
        let residual = (0..NUM_STATES)
            .map(|l| {
                let pa: f64 = (0..NUM_STATES).map(|k| p.pi.0[k] * p.a.0[k][l]).sum();
                (pa - p.pi.0[l]).abs()
            })
            .fold(0.0, f64::max);
        if !(residual <= STATIONARY_TOL) {
            out.push(Violation::NotStationary { residual });
        }
    }
    for (which, f) in [("f1", &p.f1), ("f2", &p.f2)] {
        out.extend(f.problems().into_iter().map(|problem| Violation::Density { which, problem }));
    }
    out
}

/// Stationary distribution of an ergodic chain.
///
/// Solves `(Aᵀ − I)π = 0` with the last equation replaced by `Σπ = 1`.
/// For a primitive matrix `A − I` has rank 3, so the system is nonsingular.
pub fn stationary_from_transition(a: &TransitionMatrix) -> Result<StationaryDist> {
    if let Some(v) = a.violations().into_iter().next() {
        return Err(Error::InvalidTransition(v.to_string()));
    }
    if !a.is_irreducible() {
        return Err(Error::NotErgodic("transition matrix is reducible".into()));
    }
    if !a.is_primitive() {
        return Err(Error::NotErgodic("transition matrix is periodic".into()));
    }
    const N: usize = NUM_STATES;
    let mut m = [[0.0; N + 1]; N];
    for (r, row) in m.iter_mut().enumerate().take(N - 1) {
        for c in 0..N {
            row[c] = a.0[c][r] - if r == c { 1.0 } else { 0.0 };
        }
    }
    m[N - 1] = [1.0; N + 1];

    for col in 0..N {
        let pivot = (col..N)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .expect("non-empty range");
        if m[pivot][col].abs() < 1e-14 {
            return Err(Error::NotErgodic("singular stationary system".into()));
        }
        m.swap(col, pivot);
        for r in col + 1..N {
            let factor = m[r][col] / m[col][col];
            for c in col..=N {
                m[r][c] -= factor * m[col][c];
            }
        }
    }
    let mut pi = [0.0; N];
    for r in (0..N).rev() {
        let tail: f64 = (r + 1..N).map(|c| m[r][c] * pi[c]).sum();
        pi[r] = (m[r][N] - tail) / m[r][r];
    }
    if pi.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::NotErgodic(format!("non-positive stationary vector {pi:?}")));
    }
    let sum: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= sum);
    Ok(StationaryDist(pi))
}

/// `f⁽ˢ⁾(y1, y2)` with domain checking.
pub fn emission_density(p: &HmmParams, s: StateCode, y1: f64, y2: f64) -> Result<f64> {
    for y in [y1, y2] {
        if !(y > 0.0 && y <= 1.0) {
            return Err(Error::Domain { value: y });
        }
    }
    Ok(p.emissions(y1, y2)[s.index()])
}

/// Paired p-values from the two studies, in chain order.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedPValues {
    y1: Vec<f64>,
    y2: Vec<f64>,
    ids: Option<Vec<String>>,
}

impl PairedPValues {
    pub fn new(y1: Vec<f64>, y2: Vec<f64>) -> Result<Self> {
        if y1.len() != y2.len() {
            return Err(Error::LengthMismatch(format!(
                "study 1 has {} p-values, study 2 has {}",
                y1.len(),
                y2.len()
            )));
        }
        for (index, &value) in y1.iter().chain(y2.iter()).enumerate() {
            if !(value > 0.0 && value <= 1.0) {
                return Err(Error::InvalidPValue { index: index % y1.len().max(1), value });
            }
        }
        Ok(PairedPValues { y1, y2, ids: None })
    }

    /// Replaces exact zeros by `floor` before validating. Returns the data
    /// and the number of clamped values.
    pub fn with_zero_floor(mut y1: Vec<f64>, mut y2: Vec<f64>, floor: f64) -> Result<(Self, usize)> {
        let mut clamped = 0;
        for y in y1.iter_mut().chain(y2.iter_mut()) {
            if *y == 0.0 {
                *y = floor;
                clamped += 1;
            }
        }
        Ok((PairedPValues::new(y1, y2)?, clamped))
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.y1.len() {
            return Err(Error::LengthMismatch(format!(
                "{} identifiers for {} features",
                ids.len(),
                self.y1.len()
            )));
        }
        self.ids = Some(ids);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.y1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y1.is_empty()
    }

    pub fn y1(&self) -> &[f64] {
        &self.y1
    }

    pub fn y2(&self) -> &[f64] {
        &self.y2
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    /// Identifier of feature `j`, falling back to its 1-based position.
    pub fn id(&self, j: usize) -> String {
        match &self.ids {
            Some(ids) => ids[j].clone(),
            None => (j + 1).to_string(),
        }
    }

    /// Features reordered by `order` (a permutation of `0..m`).
    pub fn permuted(&self, order: &[usize]) -> Self {
        PairedPValues {
            y1: order.iter().map(|&j| self.y1[j]).collect(),
            y2: order.iter().map(|&j| self.y2[j]).collect(),
            ids: self.ids.as_ref().map(|ids| order.iter().map(|&j| ids[j].clone()).collect()),
        }
    }
}
