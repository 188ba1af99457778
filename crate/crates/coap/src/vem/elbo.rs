//! Evidence lower bound evaluation.

use crate::error::{CoapError, Result};
use crate::model::{CountDataset, ModelParams, VariationalParams};
use crate::vem::estep::clipped_exp;

/// The three additive groups of the ELBO. All terms independent of the
/// model and variational parameters (including the 1/2 ln(2 pi) factors)
/// are dropped.
#[derive(Debug, Clone, Copy)]
pub struct ElboTerms {
    pub total: f64,
    /// sum_ij x_ij mu_ij - a_i exp(mu_ij + sigma2_ij / 2)
    pub poisson_part: f64,
    /// -1/2 sum_ij (mu_ij - l_ij)^2 / varsigma_j + sigma2_ij / varsigma_j + ln varsigma_j
    pub gaussian_part: f64,
    /// 1/2 sum_ij ln sigma2_ij
    pub entropy_part: f64,
}

/// Evaluate the ELBO at the given state. Returns the term decomposition
/// and the number of exponent clip events.
pub fn compute_elbo(
    params: &ModelParams,
    gamma: &VariationalParams,
    data: &CountDataset,
) -> Result<(ElboTerms, u64)> {
    let ell = crate::model::linear_predictor(params, &data.z)?;
    let (n, p) = (data.n(), data.p());
    let mut poisson = 0.0;
    let mut gaussian = 0.0;
    let mut entropy = 0.0;
    let mut clips = 0u64;
    for j in 0..p {
        let vs = params.varsigma[j];
        let inv_vs = 1.0 / vs;
        let ln_vs = vs.ln();
        for i in 0..n {
            let mu = gamma.mu[(i, j)];
            let s2 = gamma.sigma2[(i, j)];
            if !(s2 > 0.0) {
                return Err(CoapError::NonPositiveVariance {
                    row: i,
                    col: j,
                    value: s2,
                });
            }
            let resid = mu - ell[(i, j)];
            poisson += data.x[(i, j)] * mu - data.a[i] * clipped_exp(mu + 0.5 * s2, &mut clips);
            gaussian -= 0.5 * (resid * resid * inv_vs + s2 * inv_vs + ln_vs);
            entropy += 0.5 * s2.ln();
        }
    }
    Ok((
        ElboTerms {
            total: poisson + gaussian + entropy,
            poisson_part: poisson,
            gaussian_part: gaussian,
            entropy_part: entropy,
        },
        clips,
    ))
}
