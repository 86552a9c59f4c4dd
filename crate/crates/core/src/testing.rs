//! The rLIS step-up procedure.
//!
//! Sorting the statistics ascending, the procedure rejects the largest
//! prefix whose running mean stays at or below `q`. The running mean is the
//! plug-in estimate of the false discovery proportion, since the expected
//! number of false rejections equals the sum of the rejected rLIS values.

use serde::{Deserialize, Serialize};

use crate::em::{fit, EmConfig, EmFit};
use crate::error::{Error, Result};
use crate::forward_backward::compute_rlis;
use crate::model::{validate_params, HmmParams, PairedPValues};

#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome {
    pub rlis: Vec<f64>,
    /// Largest rejected statistic, if any rejection was made.
    pub threshold: Option<f64>,
    /// Rejected feature indices in ascending statistic order.
    pub rejected: Vec<usize>,
    /// Mean of the rejected statistics (0 when nothing is rejected).
    pub estimated_fdp: f64,
    pub nominal_q: f64,
}

impl TestOutcome {
    pub fn num_rejected(&self) -> usize {
        self.rejected.len()
    }

    /// Per-feature rejection flags.
    pub fn rejection_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.rlis.len()];
        for &j in &self.rejected {
            mask[j] = true;
        }
        mask
    }

    pub fn summary(&self) -> TestSummary {
        TestSummary {
            q: self.nominal_q,
            threshold: self.threshold,
            num_rejected: self.rejected.len(),
            estimated_fdp: self.estimated_fdp,
        }
    }
}

/// JSON sidecar of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub q: f64,
    pub threshold: Option<f64>,
    pub num_rejected: usize,
    pub estimated_fdp: f64,
}

pub(crate) fn check_level(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLevel(q))
    }
}

/// Indices sorted by statistic, ties broken by index.
pub(crate) fn ascending_order(stat: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..stat.len()).collect();
    order.sort_by(|&i, &j| stat[i].total_cmp(&stat[j]).then(i.cmp(&j)));
    order
}

/// Rejects the largest prefix of sorted `rlis` with running mean `≤ q`.
///
/// Features sharing a statistic are kept together: a prefix may only end
/// where the statistic strictly increases.
pub fn step_up(rlis: &[f64], q: f64) -> TestOutcome {
    let order = ascending_order(rlis);
    let mut sum = 0.0;
    let mut best: Option<(usize, f64)> = None;
    let mut k = 0;
    while k < order.len() {
        let value = rlis[order[k]];
        while k < order.len() && rlis[order[k]] == value {
            sum += value;
            k += 1;
        }
        let mean = sum / k as f64;
        if mean <= q {
            best = Some((k, mean));
        }
    }
    let (count, estimated_fdp) = best.unwrap_or((0, 0.0));
    let rejected = order[..count].to_vec();
    TestOutcome {
        threshold: rejected.last().map(|&j| rlis[j]),
        rlis: rlis.to_vec(),
        rejected,
        estimated_fdp,
        nominal_q: q,
    }
}

/// Fits the model and tests every feature at level `q`.
pub fn test_replicability(data: &PairedPValues, q: f64, cfg: &EmConfig) -> Result<(EmFit, TestOutcome)> {
    check_level(q)?;
    let em = fit(data, cfg)?;
    let rlis = compute_rlis(&em.params, data)?;
    Ok((em, step_up(&rlis, q)))
}

/// The procedure with known parameters.
pub fn oracle_test(true_params: &HmmParams, data: &PairedPValues, q: f64) -> Result<TestOutcome> {
    check_level(q)?;
    if let Some(v) = validate_params(true_params).into_iter().next() {
        return Err(Error::Config(v.to_string()));
    }
    let rlis = compute_rlis(true_params, data)?;
    Ok(step_up(&rlis, q))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_small_values_rejected() {
        let out = step_up(&[0.01, 0.9, 0.02], 0.05);
        assert_eq!(out.rejected, vec![0, 2]);
        assert!((out.estimated_fdp - 0.015).abs() < 1e-15);
        assert_eq!(out.threshold, Some(0.02));
    }

    #[test]
    fn nothing_below_level() {
        let out = step_up(&[0.9; 5], 0.05);
        assert!(out.rejected.is_empty());
        assert_eq!(out.threshold, None);
        assert_eq!(out.estimated_fdp, 0.0);
    }

    #[test]
    fn boundary_ties_move_together() {
        // Means: 0.0, then with both 0.1's: 0.2/3 ≈ 0.067 > 0.05, so neither tie is taken.
        let out = step_up(&[0.0, 0.1, 0.1], 0.05);
        assert_eq!(out.rejected, vec![0]);
        // At q = 0.07 both are taken.
        let out = step_up(&[0.0, 0.1, 0.1], 0.07);
        assert_eq!(out.rejected, vec![0, 1, 2]);
    }

    #[test]
    fn level_checked() {
        assert!(check_level(0.0).is_err());
        assert!(check_level(1.0).is_err());
        assert!(check_level(0.05).is_ok());
    }
}
