//! Domain types, input validation, and the shared linear predictor.
//!
//! The model for a count matrix `X` (n x p) with covariates `Z` (n x d,
//! first column all ones) and offsets `a` (length n) is
//!
//! ```text
//! x_ij | y_ij ~ Poisson(a_i * exp(y_ij)),
//! y_ij = z_i' beta_j + h_i' b_j + eps_ij,   eps_ij ~ N(0, varsigma_j),
//! ```
//!
//! with `rank(beta) <= r` and `q` latent factors.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoapError, Result};

/// Relative tolerance for the rank-revealing check on `Z`.
pub const RANK_TOL: f64 = 1e-10;

/// Observed data: counts, covariates, and per-sample offsets.
#[derive(Debug, Clone)]
pub struct CountDataset {
    /// Count matrix, n x p. Entries are validated to be nonnegative integers
    /// but stored as f64 (exact up to 2^53) to keep the hot loops in one type.
    pub x: DMatrix<f64>,
    /// Covariate matrix, n x d, first column all ones.
    pub z: DMatrix<f64>,
    /// Positive offsets, length n.
    pub a: DVector<f64>,
}

impl CountDataset {
    pub fn new(x: DMatrix<f64>, z: DMatrix<f64>, a: DVector<f64>) -> Self {
        Self { x, z, a }
    }

    /// Convenience constructor with unit offsets.
    pub fn with_unit_offsets(x: DMatrix<f64>, z: DMatrix<f64>) -> Self {
        let n = x.nrows();
        Self {
            x,
            z,
            a: DVector::from_element(n, 1.0),
        }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn d(&self) -> usize {
        self.z.ncols()
    }
}

/// Model parameters theta = (beta, B, H, varsigma).
#[derive(Debug, Clone)]
pub struct ModelParams {
    /// Coefficient matrix, p x d, rank <= r after any beta update.
    pub beta: DMatrix<f64>,
    /// Loading matrix, p x q.
    pub b: DMatrix<f64>,
    /// Factor matrix, n x q.
    pub h: DMatrix<f64>,
    /// Per-variable error variances, length p, strictly positive.
    pub varsigma: DVector<f64>,
}

/// Variational parameters of the mean-field Gaussian family over the
/// latent log-rates Y: entrywise means and variances.
#[derive(Debug, Clone)]
pub struct VariationalParams {
    pub mu: DMatrix<f64>,
    pub sigma2: DMatrix<f64>,
}

/// Configuration for a single model fit.
#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Number of latent factors, q < min(n, p).
    pub q: usize,
    /// Rank bound on beta, r <= min(p, d).
    pub r: usize,
    pub max_iter: usize,
    /// Relative ELBO tolerance of the stopping rule.
    pub eps_elbo: f64,
    /// Use the joint (Theorem-2 style) beta/varsigma update instead of the
    /// separate coordinate update.
    pub joint_beta_update: bool,
    pub seed: u64,
    /// Force a fixed association order in parallel reductions so repeated
    /// runs are bit-identical.
    pub deterministic_reductions: bool,
}

impl FitConfig {
    pub fn new(q: usize, r: usize) -> Self {
        Self {
            q,
            r,
            max_iter: 50,
            eps_elbo: 1e-5,
            joint_beta_update: false,
            seed: 0,
            deterministic_reductions: true,
        }
    }
}

/// Diagnostics accumulated during a fit.
#[derive(Debug, Clone, Default)]
pub struct FitDiagnostics {
    /// Number of exponent-clipping events in the E-step and ELBO.
    pub clip_events: u64,
    /// The identifiability SVD had fewer than q singular values above
    /// 1e-12 relative; trailing columns were filled from the SVD regardless.
    pub degenerate_product: bool,
    /// Iterations where the ELBO dropped by more than 1e-8 relative.
    pub monotonicity_violations: u64,
}

/// Output of [`crate::vem::fit`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    pub variational: VariationalParams,
    /// Regression of the raw factors on Z removed at identifiability
    /// enforcement, d x q.
    pub alpha_hat: DMatrix<f64>,
    /// Final beta before the closing rank-r re-projection (after absorbing
    /// the Z alpha B' component).
    pub beta_unprojected: DMatrix<f64>,
    pub elbo_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostics: FitDiagnostics,
}

/// A dataset/config pair that passed [`validate_inputs`].
#[derive(Debug, Clone)]
pub struct ValidatedProblem<'a> {
    pub data: &'a CountDataset,
    pub config: &'a FitConfig,
}

/// Check the model preconditions: X integral and nonnegative, a positive,
/// rank(Z) = d, q < min(n, p), r <= min(p, d).
pub fn validate_inputs<'a>(
    data: &'a CountDataset,
    config: &'a FitConfig,
) -> Result<ValidatedProblem<'a>> {
    let (n, p) = (data.n(), data.p());
    let d = data.d();
    if data.z.nrows() != n {
        return Err(CoapError::DimensionMismatch {
            context: format!("X has {} rows but Z has {}", n, data.z.nrows()),
        });
    }
    if data.a.len() != n {
        return Err(CoapError::DimensionMismatch {
            context: format!("X has {} rows but a has {} entries", n, data.a.len()),
        });
    }
    for j in 0..p {
        for i in 0..n {
            let v = data.x[(i, j)];
            if !(v.is_finite() && v >= 0.0 && v.fract() == 0.0) {
                return Err(CoapError::NonIntegerCount {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }
    for i in 0..n {
        if !(data.a[i].is_finite() && data.a[i] > 0.0) {
            return Err(CoapError::NonPositiveOffset {
                index: i,
                value: data.a[i],
            });
        }
    }
    let rank = numerical_rank(&data.z, RANK_TOL);
    if rank < d {
        return Err(CoapError::RankDeficientCovariates { rank, cols: d });
    }
    let nm = n.min(p);
    if config.q >= nm {
        return Err(CoapError::FactorCountTooLarge { q: config.q, max: nm });
    }
    let rm = p.min(d);
    if config.r > rm {
        return Err(CoapError::RankTooLarge { r: config.r, max: rm });
    }
    Ok(ValidatedProblem { data, config })
}

/// Count singular values above `tol` times the largest.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let s0 = sv.max();
    if s0 == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * s0).count()
}

/// Linear predictor L = Z beta' + H B', n x p.
pub fn linear_predictor(params: &ModelParams, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if z.ncols() != params.beta.ncols() || params.h.ncols() != params.b.ncols() {
        return Err(CoapError::DimensionMismatch {
            context: format!(
                "Z is {}x{}, beta {}x{}, H {}x{}, B {}x{}",
                z.nrows(),
                z.ncols(),
                params.beta.nrows(),
                params.beta.ncols(),
                params.h.nrows(),
                params.h.ncols(),
                params.b.nrows(),
                params.b.ncols()
            ),
        });
    }
    Ok(z * params.beta.transpose() + &params.h * params.b.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dataset() -> CountDataset {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 3.0, 0.0, 1.0]);
        let z = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, 1.0, -0.1, 1.0, 0.5]);
        CountDataset::with_unit_offsets(x, z)
    }

    #[test]
    fn accepts_valid_inputs() {
        let data = small_dataset();
        let config = FitConfig::new(1, 1);
        assert!(validate_inputs(&data, &config).is_ok());
    }

    #[test]
    fn rejects_duplicate_covariate_columns() {
        let mut data = small_dataset();
        data.z = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let config = FitConfig::new(1, 1);
        match validate_inputs(&data, &config) {
            Err(CoapError::RankDeficientCovariates { .. }) => {}
            other => panic!("expected RankDeficientCovariates, got {other:?}"),
        }
    }

    #[test]
    fn rejects_too_many_factors() {
        let data = small_dataset();
        // q = min(n, p) = 2 is not allowed.
        let config = FitConfig::new(2, 1);
        match validate_inputs(&data, &config) {
            Err(CoapError::FactorCountTooLarge { .. }) => {}
            other => panic!("expected FactorCountTooLarge, got {other:?}"),
        }
    }

    #[test]
    fn rejects_fractional_counts() {
        let mut data = small_dataset();
        data.x[(1, 1)] = 2.5;
        let config = FitConfig::new(1, 1);
        assert!(matches!(
            validate_inputs(&data, &config),
            Err(CoapError::NonIntegerCount { row: 1, col: 1, .. })
        ));
    }

    #[test]
    fn rejects_nonpositive_offset() {
        let mut data = small_dataset();
        data.a[0] = 0.0;
        let config = FitConfig::new(1, 1);
        assert!(matches!(
            validate_inputs(&data, &config),
            Err(CoapError::NonPositiveOffset { index: 0, .. })
        ));
    }

    #[test]
    fn linear_predictor_zero_params() {
        let params = ModelParams {
            beta: DMatrix::zeros(2, 2),
            b: DMatrix::zeros(2, 1),
            h: DMatrix::zeros(3, 1),
            varsigma: DVector::from_element(2, 1.0),
        };
        let z = small_dataset().z;
        let l = linear_predictor(&params, &z).unwrap();
        assert_eq!(l, DMatrix::zeros(3, 2));
    }

    #[test]
    fn linear_predictor_scalar_case() {
        let params = ModelParams {
            beta: DMatrix::from_element(1, 1, 0.5),
            b: DMatrix::from_element(1, 1, 3.0),
            h: DMatrix::from_element(1, 1, 1.0),
            varsigma: DVector::from_element(1, 1.0),
        };
        let z = DMatrix::from_element(1, 1, 2.0);
        let l = linear_predictor(&params, &z).unwrap();
        assert_eq!(l[(0, 0)], 4.0);
    }

    #[test]
    fn linear_predictor_matches_loop_oracle() {
        // random-ish 4x3 instance, fixed entries
        let z = DMatrix::from_fn(4, 2, |i, j| (i as f64 + 1.0) * 0.3 - j as f64 * 0.7);
        let beta = DMatrix::from_fn(3, 2, |i, j| 0.1 * i as f64 - 0.2 * j as f64 + 0.05);
        let h = DMatrix::from_fn(4, 2, |i, j| ((i * 2 + j) as f64).sin());
        let b = DMatrix::from_fn(3, 2, |i, j| ((i + 3 * j) as f64).cos());
        let params = ModelParams {
            beta: beta.clone(),
            b: b.clone(),
            h: h.clone(),
            varsigma: DVector::from_element(3, 1.0),
        };
        let l = linear_predictor(&params, &z).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let mut expect = 0.0;
                for k in 0..2 {
                    expect += z[(i, k)] * beta[(j, k)] + h[(i, k)] * b[(j, k)];
                }
                assert!((l[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_predictor_is_additive() {
        let z = DMatrix::from_fn(4, 2, |i, j| (i as f64) - 0.5 * j as f64 + 0.1);
        let beta = DMatrix::from_fn(3, 2, |i, j| 0.3 * (i as f64) + 0.2 * j as f64);
        let h = DMatrix::from_fn(4, 2, |i, j| ((i + j) as f64) * 0.4 - 0.6);
        let b = DMatrix::from_fn(3, 2, |i, j| 0.7 - 0.1 * ((i * 2 + j) as f64));
        let varsigma = DVector::from_element(3, 1.0);
        let full = ModelParams {
            beta: beta.clone(),
            b: b.clone(),
            h: h.clone(),
            varsigma: varsigma.clone(),
        };
        let beta_only = ModelParams {
            beta,
            b: DMatrix::zeros(3, 2),
            h: DMatrix::zeros(4, 2),
            varsigma: varsigma.clone(),
        };
        let factor_only = ModelParams {
            beta: DMatrix::zeros(3, 2),
            b,
            h,
            varsigma,
        };
        let l_full = linear_predictor(&full, &z).unwrap();
        let l_sum =
            linear_predictor(&beta_only, &z).unwrap() + linear_predictor(&factor_only, &z).unwrap();
        assert_eq!(l_full, l_sum);
    }
}
