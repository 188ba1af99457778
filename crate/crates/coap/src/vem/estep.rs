//! Closed-form variational E-step.
//!
//! The Laplace approximation sets the posterior mean of each latent
//! log-rate to the maximizer of
//!
//! ```text
//! f_ij(y) = x_ij * y - a_i * exp(y) - (y - l_ij)^2 / (2 varsigma_j)
//! ```
//!
//! and the variance to -1/f''. A second-order expansion of the exponential
//! around the previous mean turns the maximization into one explicit
//! update per entry (a Newton step on the strictly concave f_ij).

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{CoapError, Result};
use crate::model::{CountDataset, ModelParams, VariationalParams};

/// Exponent arguments are clipped to this range before exponentiation.
/// The bound guards against float overflow only: simulated log-rates can
/// legitimately reach ~45 under strong regression signals, so clipping
/// tighter than that biases the updates.
pub const EXP_CLIP: f64 = 300.0;

#[inline]
pub(crate) fn clipped_exp(arg: f64, clip_events: &mut u64) -> f64 {
    if arg > EXP_CLIP || arg < -EXP_CLIP {
        *clip_events += 1;
        arg.clamp(-EXP_CLIP, EXP_CLIP).exp()
    } else {
        arg.exp()
    }
}

/// One sweep of the explicit E-step over all entries.
///
/// Returns the updated variational parameters and the number of exponent
/// clip events. Entries are independent, so columns are processed in
/// parallel; each output entry depends only on its own inputs, which keeps
/// the result bit-identical across thread counts.
pub fn e_step_update(
    gamma_prev: &VariationalParams,
    params: &ModelParams,
    data: &CountDataset,
) -> Result<(VariationalParams, u64)> {
    let n = data.n();
    let p = data.p();
    let ell = crate::model::linear_predictor(params, &data.z)?;

    let cols: Vec<(Vec<f64>, Vec<f64>, u64)> = (0..p)
        .into_par_iter()
        .map(|j| {
            let inv_vs = 1.0 / params.varsigma[j];
            let mut mu_col = vec![0.0; n];
            let mut s2_col = vec![0.0; n];
            let mut clips = 0u64;
            for i in 0..n {
                let y0 = gamma_prev.mu[(i, j)];
                let a = data.a[i];
                let e0 = a * clipped_exp(y0, &mut clips);
                let l = ell[(i, j)];
                let mu = (data.x[(i, j)] - e0 * (1.0 - y0) + inv_vs * l) / (inv_vs + e0);
                let s2 = 1.0 / (a * clipped_exp(mu, &mut clips) + inv_vs);
                mu_col[i] = mu;
                s2_col[i] = s2;
            }
            (mu_col, s2_col, clips)
        })
        .collect();

    let mut mu = DMatrix::zeros(n, p);
    let mut sigma2 = DMatrix::zeros(n, p);
    let mut clip_events = 0u64;
    for (j, (mu_col, s2_col, clips)) in cols.into_iter().enumerate() {
        for i in 0..n {
            mu[(i, j)] = mu_col[i];
            sigma2[(i, j)] = s2_col[i];
        }
        clip_events += clips;
    }

    for j in 0..p {
        for i in 0..n {
            if !mu[(i, j)].is_finite() {
                return Err(CoapError::Overflow);
            }
            if !(sigma2[(i, j)] > 0.0) {
                return Err(CoapError::NonPositiveVariance {
                    row: i,
                    col: j,
                    value: sigma2[(i, j)],
                });
            }
        }
    }
    Ok((VariationalParams { mu, sigma2 }, clip_events))
}

/// Scalar version of the update for a single entry; used by the E-step
/// fixed-point tests.
pub fn e_step_entry(x: f64, a: f64, varsigma: f64, ell: f64, y0: f64) -> (f64, f64) {
    let mut clips = 0;
    let inv_vs = 1.0 / varsigma;
    let e0 = a * clipped_exp(y0, &mut clips);
    let mu = (x - e0 * (1.0 - y0) + inv_vs * ell) / (inv_vs + e0);
    let s2 = 1.0 / (a * clipped_exp(mu, &mut clips) + inv_vs);
    (mu, s2)
}
