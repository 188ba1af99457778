//! Singular-value-ratio selection of the number of factors and the
//! coefficient rank.

use nalgebra::DMatrix;

use crate::error::{CoapError, Result};
use crate::model::{CountDataset, FitConfig, FitResult};

/// Default upper bound for the number of factors.
pub const DEFAULT_Q_MAX: usize = 15;
/// Default upper bound for the coefficient rank.
pub const DEFAULT_R_MAX: usize = 24;

/// Selection report: chosen orders and the raw ratio vectors.
#[derive(Debug, Clone)]
pub struct SvrReport {
    pub q_hat: usize,
    pub r_hat: usize,
    pub ratios_b: Vec<f64>,
    pub ratios_beta: Vec<f64>,
    pub q_max: usize,
    pub r_max: usize,
}

/// Consecutive singular-value ratios (nu_1/nu_2, ..., nu_{k_max-1}/nu_{k_max}).
/// Each denominator is floored at 1e-10 * nu_1 so a zero tail produces a
/// finite, maximal ratio exactly at the rank cut.
pub fn singular_value_ratios(m: &DMatrix<f64>, k_max: usize) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Err(CoapError::EmptyMatrix);
    }
    let k_max = k_max.min(m.nrows().min(m.ncols()));
    if k_max < 2 {
        return Ok(Vec::new());
    }
    let mut sv: Vec<f64> = m.clone().singular_values().iter().cloned().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let floor = 1e-10 * sv[0];
    Ok((0..k_max - 1)
        .map(|k| sv[k] / sv[k + 1].max(floor))
        .collect())
}

fn argmax_ties_low(ratios: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in ratios.iter().enumerate() {
        if v > ratios[best] {
            best = k;
        }
    }
    best + 1 // ratio index k corresponds to candidate order k+1
}

/// Fit once at (q_max, r_max) and select (q_hat, r_hat) by the maximal
/// consecutive singular-value ratio of the post-identifiability loading and
/// coefficient estimates. Ties break toward the smaller order.
pub fn svr_select(
    data: &CountDataset,
    q_max: usize,
    r_max: usize,
    config: &FitConfig,
) -> Result<SvrReport> {
    let fit = svr_fit(data, q_max, r_max, config)?;
    svr_from_fit(&fit, q_max, r_max)
}

/// The single large fit used by [`svr_select`], exposed so callers can
/// reuse it.
pub fn svr_fit(
    data: &CountDataset,
    q_max: usize,
    r_max: usize,
    config: &FitConfig,
) -> Result<FitResult> {
    let mut big = config.clone();
    big.q = q_max;
    big.r = r_max;
    crate::vem::fit(data, &big)
}

/// Build the report from an existing fit at (q_max, r_max).
pub fn svr_from_fit(fit: &FitResult, q_max: usize, r_max: usize) -> Result<SvrReport> {
    let ratios_b = singular_value_ratios(&fit.params.b, q_max)?;
    let ratios_beta = singular_value_ratios(&fit.params.beta, r_max)?;
    let q_hat = if ratios_b.is_empty() { 1 } else { argmax_ties_low(&ratios_b) };
    let r_hat = if ratios_beta.is_empty() { 1 } else { argmax_ties_low(&ratios_beta) };
    Ok(SvrReport {
        q_hat,
        r_hat,
        ratios_b,
        ratios_beta,
        q_max,
        r_max,
    })
}
