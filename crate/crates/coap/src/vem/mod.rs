//! Variational EM driver: initialization, the update loop, and the
//! identifiability post-processing.

pub mod elbo;
pub mod estep;
pub mod identify;
pub mod mstep;

pub use elbo::{compute_elbo, ElboTerms};
pub use estep::e_step_update;
pub use identify::enforce_identifiability;
pub use mstep::{
    update_beta_separate, update_beta_varsigma_joint, update_factors, update_loadings,
    update_varsigma,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{CoapError, Result};
use crate::linalg::{sorted_svd, truncated_svd_rank};
use crate::model::{
    validate_inputs, CountDataset, FitConfig, FitDiagnostics, FitResult, ModelParams,
    VariationalParams,
};

/// Relative slack allowed on the monotone ELBO trace.
pub const MONOTONICITY_SLACK: f64 = 1e-8;

/// Initial state (theta, gamma) for the update loop.
///
/// mu starts at ln((x + 0.5)/a), sigma2 at one; beta at the rank-r
/// truncation of the least-squares coefficient of mu on Z; (H, B) from the
/// top-q SVD of the remaining residual scaled so H'H/n = I; varsigma at the
/// column variances of the final residual, floored at 1e-4.
pub fn initialize(
    data: &CountDataset,
    config: &FitConfig,
) -> Result<(ModelParams, VariationalParams)> {
    let (n, p) = (data.n(), data.p());
    let mu = DMatrix::from_fn(n, p, |i, j| ((data.x[(i, j)] + 0.5) / data.a[i]).ln());
    let sigma2 = DMatrix::from_element(n, p, 1.0);

    let bt = mstep::beta_tilde(&mu, &data.z)?;
    let beta0 = truncated_svd_rank(&bt, config.r);

    let resid = &mu - &data.z * beta0.transpose();
    let (u, s, v) = sorted_svd(&resid);
    let q = config.q;
    let sqrt_n = (n as f64).sqrt();
    let h0 = u.columns(0, q) * sqrt_n;
    let mut b0 = v.columns(0, q).into_owned();
    for k in 0..q {
        b0.column_mut(k).scale_mut(s[k] / sqrt_n);
    }

    let resid2 = &resid - &h0 * b0.transpose();
    let varsigma = DVector::from_fn(p, |j, _| {
        let col = resid2.column(j);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        var.max(1e-4)
    });

    Ok((
        ModelParams {
            beta: beta0,
            b: b0,
            h: h0,
            varsigma,
        },
        VariationalParams { mu, sigma2 },
    ))
}

/// Fit the model by variational EM (Algorithm 1) and enforce the
/// identifiability conditions on the result.
pub fn fit(data: &CountDataset, config: &FitConfig) -> Result<FitResult> {
    let (params, gamma) = {
        validate_inputs(data, config)?;
        initialize(data, config)?
    };
    fit_from(data, config, params, gamma)
}

/// As [`fit`], but starting from a caller-supplied state.
pub fn fit_from(
    data: &CountDataset,
    config: &FitConfig,
    mut params: ModelParams,
    mut gamma: VariationalParams,
) -> Result<FitResult> {
    validate_inputs(data, config)?;
    let mut diagnostics = FitDiagnostics::default();
    let mut elbo_trace = Vec::with_capacity(config.max_iter + 1);

    let (terms0, clips0) = compute_elbo(&params, &gamma, data)?;
    diagnostics.clip_events += clips0;
    check_finite(terms0.total, 0)?;
    elbo_trace.push(terms0.total);

    let mut converged = false;
    let mut iterations = 0;
    for t in 1..=config.max_iter {
        let (gamma_new, clips) = e_step_update(&gamma, &params, data)?;
        gamma = gamma_new;
        diagnostics.clip_events += clips;

        params.b = update_loadings(&gamma, &params, &data.z)?;
        params.h = update_factors(&gamma, &params, &data.z)?;
        // Keep the factors out of the covariate column space (condition
        // (A3)) every iteration: without this the factor and coefficient
        // updates trade the covariate-aligned signal back and forth and the
        // loop stalls away from the optimum. The removed component is
        // covariate-explained, so the next beta update absorbs it.
        let alpha = crate::linalg::spd_solve(
            data.z.transpose() * &data.z,
            &(data.z.transpose() * &params.h),
            "Z'Z",
        )?;
        params.h -= &data.z * alpha;
        if config.joint_beta_update {
            let (beta, varsigma) = update_beta_varsigma_joint(&gamma, &params, &data.z, config.r)?;
            params.beta = beta;
            params.varsigma = varsigma;
        } else {
            params.beta = update_beta_separate(&gamma, &params, &data.z, config.r)?;
            params.varsigma = update_varsigma(&gamma, &params, &data.z, &params.beta);
        }

        let (terms, clips) = compute_elbo(&params, &gamma, data)?;
        diagnostics.clip_events += clips;
        check_finite(terms.total, t)?;
        let prev = *elbo_trace.last().unwrap();
        elbo_trace.push(terms.total);
        iterations = t;
        if terms.total < prev - MONOTONICITY_SLACK * prev.abs() {
            diagnostics.monotonicity_violations += 1;
        }
        if (terms.total - prev).abs() / prev.abs() < config.eps_elbo {
            converged = true;
            break;
        }
    }

    // Identifiability: rotate (H, B), absorb the covariate-explained factor
    // component into beta so fitted values are preserved, then re-project
    // beta to rank r.
    let ident = enforce_identifiability(&params.h, &params.b, &data.z)?;
    diagnostics.degenerate_product = ident.degenerate_product;
    let beta_unprojected = &params.beta + &params.b * ident.alpha_hat.transpose();
    params.h = ident.h;
    params.b = ident.b;
    let half = DMatrix::from_diagonal(&params.varsigma.map(f64::sqrt));
    let inv_half = DMatrix::from_diagonal(&params.varsigma.map(|v| 1.0 / v.sqrt()));
    params.beta =
        mstep::weighted_rank_projection(&beta_unprojected, &half, &inv_half, &data.z, config.r)?;

    Ok(FitResult {
        params,
        variational: gamma,
        alpha_hat: ident.alpha_hat,
        beta_unprojected,
        elbo_trace,
        iterations,
        converged,
        diagnostics,
    })
}

fn check_finite(value: f64, iteration: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(CoapError::NonFiniteElbo { iteration, value })
    }
}
