//! Scaled forward-backward inference for the four-state chain.
//!
//! The forward variables are normalized at every position, `α̂ⱼ = αⱼ / (c₁⋯cⱼ)`,
//! and the backward variables share the same constants, so
//! `log p_m = Σ log cⱼ` and the posterior ratios are unchanged.

use crate::error::{Error, Result};
use crate::model::{HmmParams, PairedPValues, NUM_STATES};

/// Lower bound applied to every joint emission density during inference.
pub const EMISSION_FLOOR: f64 = 1e-300;

type Row = [f64; NUM_STATES];

/// Posterior marginals of one forward-backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTables {
    /// `gamma[j][s] = P(s_j = s | data)`.
    pub gamma: Vec<Row>,
    /// `xi[j][k][l] = P(s_j = k, s_{j+1} = l | data)`, present when requested.
    pub xi: Option<Vec<[Row; NUM_STATES]>>,
    /// Natural log of the observed-data likelihood.
    pub log_likelihood: f64,
    /// `rlis[j] = P(s_j ∈ {0,1,2} | data)`, computed from the unnormalized
    /// products so that small values keep their relative precision.
    pub rlis: Vec<f64>,
}

impl PosteriorTables {
    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }
}

/// Joint emission densities `f⁽ˢ⁾(y1ⱼ, y2ⱼ)` for every feature, floored at
/// [`EMISSION_FLOOR`].
pub fn emission_table(p: &HmmParams, data: &PairedPValues) -> Vec<Row> {
    data.y1()
        .iter()
        .zip(data.y2())
        .map(|(&y1, &y2)| p.emissions(y1, y2).map(|e| e.max(EMISSION_FLOOR)))
        .collect()
}

/// Forward-backward pass with γ and ξ.
pub fn run_forward_backward(p: &HmmParams, data: &PairedPValues) -> Result<PosteriorTables> {
    run_forward_backward_with(p, data, true)
}

pub fn run_forward_backward_with(p: &HmmParams, data: &PairedPValues, store_xi: bool) -> Result<PosteriorTables> {
    forward_backward(p.pi.probs(), p.a.rows(), &emission_table(p, data), store_xi)
}

/// Posterior replicability-null probabilities under `p`.
pub fn compute_rlis(p: &HmmParams, data: &PairedPValues) -> Result<Vec<f64>> {
    Ok(run_forward_backward_with(p, data, false)?.rlis)
}

/// Forward-backward on a precomputed emission table.
pub fn forward_backward(
    pi: &Row,
    a: &[Row; NUM_STATES],
    emissions: &[Row],
    store_xi: bool,
) -> Result<PosteriorTables> {
    let m = emissions.len();
    if m == 0 {
        return Err(Error::LengthMismatch("no features".into()));
    }

    let mut alpha = vec![[0.0; NUM_STATES]; m];
    let mut scale = vec![0.0; m];
    let mut log_likelihood = 0.0;

    let mut first: Row = std::array::from_fn(|s| pi[s] * emissions[0][s]);
    normalize_into(&mut first, &mut scale[0], 0)?;
    alpha[0] = first;
    log_likelihood += scale[0].ln();

    for j in 1..m {
        let prev = alpha[j - 1];
        let mut next: Row = [0.0; NUM_STATES];
        for (l, slot) in next.iter_mut().enumerate() {
            let inflow: f64 = (0..NUM_STATES).map(|k| prev[k] * a[k][l]).sum();
            *slot = inflow * emissions[j][l];
        }
        normalize_into(&mut next, &mut scale[j], j)?;
        alpha[j] = next;
        log_likelihood += scale[j].ln();
    }

    let mut gamma = vec![[0.0; NUM_STATES]; m];
    let mut rlis = vec![0.0; m];
    let mut xi = store_xi.then(|| vec![[[0.0; NUM_STATES]; NUM_STATES]; m - 1]);

    let mut beta: Row = [1.0; NUM_STATES];
    fill_gamma(&alpha[m - 1], &beta, &mut gamma[m - 1], &mut rlis[m - 1]);
    for j in (0..m - 1).rev() {
        // w[l] = f⁽ˡ⁾(y_{j+1}) β̂_{j+1}(l)
        let w: Row = std::array::from_fn(|l| emissions[j + 1][l] * beta[l]);
        if let Some(xi) = xi.as_mut() {
            let slice = &mut xi[j];
            let mut total = 0.0;
            for k in 0..NUM_STATES {
                for l in 0..NUM_STATES {
                    let v = alpha[j][k] * a[k][l] * w[l];
                    slice[k][l] = v;
                    total += v;
                }
            }
            slice.iter_mut().flatten().for_each(|v| *v /= total);
        }
        let c = scale[j + 1];
        beta = std::array::from_fn(|k| (0..NUM_STATES).map(|l| a[k][l] * w[l]).sum::<f64>() / c);
        fill_gamma(&alpha[j], &beta, &mut gamma[j], &mut rlis[j]);
    }

    Ok(PosteriorTables { gamma, xi, log_likelihood, rlis })
}

fn normalize_into(row: &mut Row, scale: &mut f64, index: usize) -> Result<()> {
    let total: f64 = row.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::ZeroLikelihood { index });
    }
    row.iter_mut().for_each(|x| *x /= total);
    *scale = total;
    Ok(())
}

fn fill_gamma(alpha: &Row, beta: &Row, gamma: &mut Row, rlis: &mut f64) {
    let prod: Row = std::array::from_fn(|s| alpha[s] * beta[s]);
    let total: f64 = prod.iter().sum();
    *gamma = prod.map(|x| x / total);
    *rlis = (prod[0] + prod[1] + prod[2]) / total;
}
