//! Weighted antitonic regression and the monotone-density M-step.
//!
//! The signal-density update maximizes `Σ Γⱼ log f(yⱼ)` over non-increasing
//! densities. With ordered distinct p-values, spacings `dⱼ = y₍ⱼ₎ − y₍ⱼ₋₁₎`
//! and total weight `W = ΣΓ`, the maximizer is `ẑⱼ = −1/ûⱼ`, where `û` is
//! the Γ-weighted non-increasing least-squares fit to the targets
//! `uⱼ = −W dⱼ / Γⱼ`. Pooling a block `B` gives `û_B = −W Σ_B d / Σ_B Γ`, so
//! the height of a block is `Σ_B Γ / (W Σ_B d)`.

use crate::error::{Error, Result};
use crate::model::StepDensity;

/// Targets and positive weights for a weighted monotone regression.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLevels {
    targets: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedLevels {
    pub fn new(targets: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if targets.len() != weights.len() {
            return Err(Error::LengthMismatch(format!(
                "{} targets, {} weights",
                targets.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|&&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::DegenerateWeights(format!("weight {w} is not positive")));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::DegenerateWeights("non-finite target".into()));
        }
        Ok(WeightedLevels { targets, weights })
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// A pooled run of adjacent points.
#[derive(Debug, Clone, Copy)]
struct Block {
    weight: f64,
    weighted_sum: f64,
    len: usize,
}

impl Block {
    fn level(&self) -> f64 {
        self.weighted_sum / self.weight
    }
}

/// Stack-based pooling for a non-increasing fit. Each input is
/// `(weight, weight·target)`; adjacent blocks merge while a later block's
/// level exceeds an earlier one's.
fn pool_nonincreasing(points: impl Iterator<Item = (f64, f64)>) -> Vec<Block> {
    let mut stack: Vec<Block> = Vec::new();
    for (weight, weighted_sum) in points {
        let mut cur = Block { weight, weighted_sum, len: 1 };
        while let Some(top) = stack.last() {
            // cur.level > top.level, compared without division.
            if cur.weighted_sum * top.weight > top.weighted_sum * cur.weight {
                let top = stack.pop().expect("non-empty");
                cur = Block {
                    weight: top.weight + cur.weight,
                    weighted_sum: top.weighted_sum + cur.weighted_sum,
                    len: top.len + cur.len,
                };
            } else {
                break;
            }
        }
        stack.push(cur);
    }
    stack
}

/// Weighted least-squares projection of the targets onto the cone of
/// non-increasing sequences.
pub fn pava_nonincreasing(w: &WeightedLevels) -> Vec<f64> {
    let blocks = pool_nonincreasing(w.weights.iter().zip(&w.targets).map(|(&wt, &t)| (wt, wt * t)));
    let mut out = Vec::with_capacity(w.len());
    for b in blocks {
        let level = b.level();
        out.extend(std::iter::repeat_n(level, b.len));
    }
    out
}

/// Non-increasing step density maximizing `Σ Γⱼ log f(yⱼ)`.
///
/// `sorted_p` must be non-decreasing in (0, 1]. Exact ties are merged with
/// their weights summed, and points with zero weight are dropped. The
/// density is constant on each `(y₍ⱼ₋₁₎, y₍ⱼ₎]` between retained p-values
/// and zero above the largest one.
pub fn grenander_update(sorted_p: &[f64], gamma_mass: &[f64]) -> Result<StepDensity> {
    if sorted_p.len() != gamma_mass.len() {
        return Err(Error::LengthMismatch(format!(
            "{} p-values, {} weights",
            sorted_p.len(),
            gamma_mass.len()
        )));
    }
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(sorted_p.len());
    let mut prev = 0.0;
    for (&y, &g) in sorted_p.iter().zip(gamma_mass) {
        if !(y > 0.0 && y <= 1.0) {
            return Err(Error::Domain { value: y });
        }
        if y < prev {
            return Err(Error::DegenerateWeights("p-values are not sorted".into()));
        }
        if !(g >= 0.0 && g.is_finite()) {
            return Err(Error::DegenerateWeights(format!("weight {g} is negative or non-finite")));
        }
        prev = y;
        if g == 0.0 {
            continue;
        }
        match points.last_mut() {
            Some(last) if last.0 == y => last.1 += g,
            _ => points.push((y, g)),
        }
    }
    if points.is_empty() {
        return Err(Error::DegenerateWeights("all weights are zero".into()));
    }
    grenander_from_points(&points)
}

/// Sorts `(p, Γ)` pairs and calls [`grenander_update`].
pub fn grenander_unsorted(p: &[f64], gamma_mass: &[f64]) -> Result<StepDensity> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&i, &j| p[i].total_cmp(&p[j]));
    let sp: Vec<f64> = order.iter().map(|&i| p[i]).collect();
    let sg: Vec<f64> = order.iter().map(|&i| gamma_mass.get(i).copied().unwrap_or(f64::NAN)).collect();
    grenander_update(&sp, &sg)
}

/// `points`: strictly increasing p-values with positive weights.
fn grenander_from_points(points: &[(f64, f64)]) -> Result<StepDensity> {
    let n = points.len();
    let total: f64 = points.iter().map(|p| p.1).sum();
    let right = |j: usize| points[j].0;
    let left = |j: usize| if j == 0 { 0.0 } else { points[j - 1].0 };

    // Targets u = −W d / Γ, weighted by Γ; weight·target = −W d.
    let blocks = pool_nonincreasing((0..n).map(|j| (points[j].1, -total * (right(j) - left(j)))));

    let mut breakpoints = Vec::with_capacity(blocks.len() + 1);
    let mut heights: Vec<f64> = Vec::with_capacity(blocks.len());
    breakpoints.push(0.0);
    let mut end = 0;
    for b in &blocks {
        end += b.len;
        let hi = right(end - 1);
        let lo = *breakpoints.last().expect("non-empty");
        let height = b.weight / (total * (hi - lo));
        if heights.last() == Some(&height) {
            *breakpoints.last_mut().expect("non-empty") = hi;
        } else {
            heights.push(height);
            breakpoints.push(hi);
        }
    }
    // Adjacent heights from PAVA are non-increasing up to rounding in the
    // division; repair the last ulp so the invariant holds exactly.
    for k in 1..heights.len() {
        if heights[k] > heights[k - 1] {
            heights[k] = heights[k - 1];
        }
    }
    if points[n - 1].0 < 1.0 {
        breakpoints.push(1.0);
        heights.push(0.0);
    }
    StepDensity::new(breakpoints, heights)
}

/// The weighted log-likelihood objective `Σ Γⱼ log f(yⱼ)`.
pub fn weighted_log_likelihood(f: &StepDensity, p: &[f64], gamma_mass: &[f64]) -> f64 {
    p.iter()
        .zip(gamma_mass)
        .filter(|(_, &g)| g > 0.0)
        .map(|(&y, &g)| g * f.eval(y).ln())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn levels(t: &[f64], w: &[f64]) -> WeightedLevels {
        WeightedLevels::new(t.to_vec(), w.to_vec()).unwrap()
    }

    #[test]
    fn already_monotone_is_unchanged() {
        assert_eq!(pava_nonincreasing(&levels(&[3.0, 2.0, 1.0], &[1.0, 5.0, 0.1])), vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn violated_pair_pools_to_mean() {
        assert_eq!(pava_nonincreasing(&levels(&[1.0, 3.0], &[1.0, 1.0])), vec![2.0, 2.0]);
    }

    #[test]
    fn three_point_example() {
        // (1, 3, 2) with weights (1, 2, 1): pooling the first two gives 7/3,
        // which already exceeds 2.
        let out = pava_nonincreasing(&levels(&[1.0, 3.0, 2.0], &[1.0, 2.0, 1.0]));
        assert_eq!(out, vec![7.0 / 3.0, 7.0 / 3.0, 2.0]);
    }

    #[test]
    fn invalid_levels_rejected() {
        assert!(WeightedLevels::new(vec![1.0], vec![0.0]).is_err());
        assert!(WeightedLevels::new(vec![1.0, 2.0], vec![1.0]).is_err());
    }

    #[test]
    fn equal_spacing_equal_weight_is_uniform() {
        let n = 9;
        let p: Vec<f64> = (1..=n).map(|j| j as f64 / n as f64).collect();
        let f = grenander_update(&p, &vec![1.0; n]).unwrap();
        // Spacings of j/n differ in the last ulp, so several steps may remain.
        assert!(f.heights().iter().all(|h| (h - 1.0).abs() < 1e-12));
    }

    #[test]
    fn two_point_closed_form() {
        // Intervals (0, 0.2] and (0.2, 1]; heights 0.9/0.2 and 0.1/0.8.
        let f = grenander_update(&[0.2, 1.0], &[0.9, 0.1]).unwrap();
        assert_eq!(f.breakpoints(), &[0.0, 0.2, 1.0]);
        assert!((f.heights()[0] - 4.5).abs() < 1e-12);
        assert!((f.heights()[1] - 0.125).abs() < 1e-12);
        assert!((f.integral() - 1.0).abs() < 1e-12);

        // Below the largest point the mass ends there; the density is 0 above it.
        let g = grenander_update(&[0.2, 0.6], &[0.9, 0.1]).unwrap();
        assert_eq!(g.breakpoints(), &[0.0, 0.2, 0.6, 1.0]);
        assert!((g.heights()[0] - 4.5).abs() < 1e-12);
        assert!((g.heights()[1] - 0.25).abs() < 1e-12);
        assert_eq!(g.heights()[2], 0.0);
    }

    #[test]
    fn violating_spacings_pool() {
        // A large weight on a wide interval after a small one must pool.
        let f = grenander_update(&[0.1, 0.5, 1.0], &[0.1, 0.8, 0.1]).unwrap();
        // Unconstrained: 0.1/0.1 = 1, 0.8/0.4 = 2, 0.1/0.5 = 0.2; the first two pool to 0.9/0.5.
        assert_eq!(f.breakpoints(), &[0.0, 0.5, 1.0]);
        assert!((f.heights()[0] - 1.8).abs() < 1e-12);
        assert!((f.heights()[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn ties_and_zero_weights_merge() {
        let a = grenander_update(&[0.1, 0.1, 0.3, 0.7], &[0.2, 0.3, 0.0, 0.5]).unwrap();
        let b = grenander_update(&[0.1, 0.7], &[0.5, 0.5]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(grenander_update(&[0.1, 0.2], &[0.0, 0.0]), Err(Error::DegenerateWeights(_))));
        assert!(grenander_update(&[0.3, 0.2], &[1.0, 1.0]).is_err());
        assert!(grenander_update(&[0.0, 0.2], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn weight_scaling_invariance() {
        let p = [0.01, 0.05, 0.2, 0.3, 0.8];
        let w = [0.9, 0.7, 0.5, 0.2, 0.1];
        let f = grenander_update(&p, &w).unwrap();
        let w3: Vec<f64> = w.iter().map(|x| x * 3.0).collect();
        let g = grenander_update(&p, &w3).unwrap();
        for (a, b) in f.heights().iter().zip(g.heights()) {
            assert!((a - b).abs() <= 1e-12 * a.abs());
        }
        assert_eq!(f.breakpoints(), g.breakpoints());
    }
}
