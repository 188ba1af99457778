//! M-step updates: loadings, factors, the low-rank coefficient matrix,
//! and the error variances.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoapError, Result};
use crate::linalg::{sorted_svd, spd_solve, sym_sqrt_pair};
use crate::model::{ModelParams, VariationalParams};

/// Floor applied to every varsigma update.
pub const VARSIGMA_FLOOR: f64 = 1e-6;

/// Loadings update: b_j = (H'H)^-1 sum_i h_i (mu_ij - z_i' beta_j).
/// Returns the new p x q loading matrix.
pub fn update_loadings(
    gamma: &VariationalParams,
    params: &ModelParams,
    z: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let resid = &gamma.mu - z * params.beta.transpose();
    let gram = params.h.transpose() * &params.h;
    let rhs = params.h.transpose() * resid;
    // rows of the solution are b_j'
    let solved = spd_solve(gram, &rhs, "H'H")?;
    Ok(solved.transpose())
}

/// Factors update: h_i = (B' S^-1 B)^-1 sum_j b_j (mu_ij - z_i' beta_j) / varsigma_j.
/// Returns the new n x q factor matrix.
pub fn update_factors(
    gamma: &VariationalParams,
    params: &ModelParams,
    z: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let p = params.b.nrows();
    let resid = &gamma.mu - z * params.beta.transpose();
    // B' S^-1 B with S = diag(varsigma)
    let mut weighted_b = params.b.clone();
    for j in 0..p {
        let w = 1.0 / params.varsigma[j];
        weighted_b.row_mut(j).scale_mut(w);
    }
    let gram = params.b.transpose() * &weighted_b;
    let rhs = weighted_b.transpose() * resid.transpose();
    let solved = spd_solve(gram, &rhs, "B'S^-1B")?;
    Ok(solved.transpose())
}

/// Residual of the variational means after removing the factor part:
/// Ytilde_ij = mu_ij - b_j' h_i.
pub fn y_tilde(gamma: &VariationalParams, params: &ModelParams) -> DMatrix<f64> {
    &gamma.mu - &params.h * params.b.transpose()
}

/// Unconstrained multiresponse least-squares coefficient
/// beta_tilde = Ytilde' Z (Z'Z)^-1, p x d.
pub fn beta_tilde(ytilde: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ztz = z.transpose() * z;
    let chol = nalgebra::Cholesky::new(ztz).ok_or(CoapError::SingularCovariateGram)?;
    let rhs = z.transpose() * ytilde;
    // beta_tilde' = (Z'Z)^-1 Z' Ytilde
    Ok(chol.solve(&rhs).transpose())
}

/// Weighted rank-r projection of a coefficient matrix:
/// with A = S^-1/2 beta (Z'Z/n)^1/2 and U_r the top-r left singular vectors
/// of A, returns S^1/2 U_r U_r' S^-1/2 beta.
///
/// `sigma_half` / `sigma_inv_half` are the (symmetric) square root and
/// inverse square root of the error covariance used as the weight.
pub fn weighted_rank_projection(
    beta: &DMatrix<f64>,
    sigma_half: &DMatrix<f64>,
    sigma_inv_half: &DMatrix<f64>,
    z: &DMatrix<f64>,
    r: usize,
) -> Result<DMatrix<f64>> {
    let n = z.nrows() as f64;
    let ztz_n = (z.transpose() * z) / n;
    let (ztz_half, _) = sym_sqrt_pair(&ztz_n).ok_or(CoapError::SingularCovariateGram)?;
    let whitened = sigma_inv_half * beta;
    let a_bar = &whitened * ztz_half;
    let (u, _s, _v) = sorted_svd(&a_bar);
    let k = r.min(u.ncols());
    let u_r = u.columns(0, k).into_owned();
    Ok(sigma_half * &u_r * (u_r.transpose() * whitened))
}

fn diag_sqrt_pair(varsigma: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let half = DMatrix::from_diagonal(&varsigma.map(f64::sqrt));
    let inv_half = DMatrix::from_diagonal(&varsigma.map(|v| 1.0 / v.sqrt()));
    (half, inv_half)
}

/// Separate low-rank coefficient update at fixed varsigma.
pub fn update_beta_separate(
    gamma: &VariationalParams,
    params: &ModelParams,
    z: &DMatrix<f64>,
    r: usize,
) -> Result<DMatrix<f64>> {
    let ytilde = y_tilde(gamma, params);
    let bt = beta_tilde(&ytilde, z)?;
    let (half, inv_half) = diag_sqrt_pair(&params.varsigma);
    weighted_rank_projection(&bt, &half, &inv_half, z, r)
}

/// Error-variance update at a given beta:
/// varsigma_j = (1/n) [ sum_i (Ytilde_ij - z_i' beta_j)^2 + sum_i sigma2_ij ],
/// floored at `VARSIGMA_FLOOR`.
pub fn update_varsigma(
    gamma: &VariationalParams,
    params: &ModelParams,
    z: &DMatrix<f64>,
    beta: &DMatrix<f64>,
) -> DVector<f64> {
    let ytilde = y_tilde(gamma, params);
    let resid = &ytilde - z * beta.transpose();
    let n = resid.nrows() as f64;
    let p = resid.ncols();
    DVector::from_fn(p, |j, _| {
        let ss: f64 = resid.column(j).iter().map(|v| v * v).sum();
        let s2: f64 = gamma.sigma2.column(j).iter().sum();
        ((ss + s2) / n).max(VARSIGMA_FLOOR)
    })
}

/// Joint global update of (beta, varsigma).
///
/// Uses the full residual covariance at beta_tilde as the whitening weight,
/// projects beta_tilde to rank r in that metric, and recomputes varsigma
/// at the projected beta.
pub fn update_beta_varsigma_joint(
    gamma: &VariationalParams,
    params: &ModelParams,
    z: &DMatrix<f64>,
    r: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = z.nrows();
    let d = z.ncols();
    if n <= d {
        return Err(CoapError::SingularSigmaTilde);
    }
    let ytilde = y_tilde(gamma, params);
    let bt = beta_tilde(&ytilde, z)?;
    let resid = ytilde.transpose() - &bt * z.transpose(); // p x n
    let mut sigma_tilde = (&resid * resid.transpose()) / n as f64;
    let p = sigma_tilde.nrows();
    for j in 0..p {
        let s2: f64 = gamma.sigma2.column(j).iter().sum();
        sigma_tilde[(j, j)] += s2 / n as f64;
    }
    let (half, inv_half) = sym_sqrt_pair(&sigma_tilde).ok_or(CoapError::SingularSigmaTilde)?;
    let beta_star = weighted_rank_projection(&bt, &half, &inv_half, z, r)?;
    let varsigma_star = update_varsigma(gamma, params, z, &beta_star);
    Ok((beta_star, varsigma_star))
}

/// Objective of the rank-constrained coefficient subproblem at fixed
/// varsigma: -Tr{ S^-1 (1/n) (Ytilde' - beta Z')(Ytilde' - beta Z')' }.
pub fn beta_objective(
    beta: &DMatrix<f64>,
    varsigma: &DVector<f64>,
    ytilde: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> f64 {
    let resid = ytilde - z * beta.transpose(); // n x p
    let n = resid.nrows() as f64;
    let mut tr = 0.0;
    for j in 0..resid.ncols() {
        let ss: f64 = resid.column(j).iter().map(|v| v * v).sum();
        tr += ss / varsigma[j];
    }
    -tr / n
}

/// Full joint objective in (beta, varsigma):
/// (n/2) [ ln |S^-1| - Tr{ S^-1 W(beta) } ] with
/// W(beta) = (1/n) [ (Ytilde' - beta Z')^{x2} + sum_i Sigma_i ].
pub fn joint_objective(
    beta: &DMatrix<f64>,
    varsigma: &DVector<f64>,
    gamma: &VariationalParams,
    z: &DMatrix<f64>,
    params_for_ytilde: &ModelParams,
) -> f64 {
    let ytilde = y_tilde(gamma, params_for_ytilde);
    let resid = &ytilde - z * beta.transpose();
    let n = resid.nrows() as f64;
    let mut obj = 0.0;
    for j in 0..resid.ncols() {
        let ss: f64 = resid.column(j).iter().map(|v| v * v).sum();
        let s2: f64 = gamma.sigma2.column(j).iter().sum();
        let w_jj = (ss + s2) / n;
        obj += -varsigma[j].ln() - w_jj / varsigma[j];
    }
    0.5 * n * obj
}
