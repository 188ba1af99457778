//! Small shared linear-algebra helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoapError, Result};

/// Add a ridge of `1e-10 * trace / dim` to a square matrix in place.
/// Guards against transient collinearity before inversion.
pub fn ridge_guard(g: &mut DMatrix<f64>) {
    let dim = g.nrows();
    if dim == 0 {
        return;
    }
    let ridge = 1e-10 * g.trace() / dim as f64;
    for k in 0..dim {
        g[(k, k)] += ridge;
    }
}

/// Cholesky-based solve of `G X = Rhs` for symmetric positive definite `G`.
/// If the factorization fails (transient collinearity), retries once with a
/// small ridge on the diagonal.
pub fn spd_solve(g: DMatrix<f64>, rhs: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    if let Some(chol) = nalgebra::Cholesky::new(g.clone()) {
        return Ok(chol.solve(rhs));
    }
    let mut ridged = g;
    ridge_guard(&mut ridged);
    let chol = nalgebra::Cholesky::new(ridged).ok_or_else(|| CoapError::SingularGram {
        context: context.to_string(),
    })?;
    Ok(chol.solve(rhs))
}

/// Symmetric square root and inverse square root via eigendecomposition.
/// Fails if the smallest eigenvalue is not strictly positive relative to
/// the largest.
pub fn sym_sqrt_pair(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let max_ev = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    if !eig.eigenvalues.iter().all(|&v| v > 1e-14 * max_ev.max(0.0) && v > 0.0) {
        return None;
    }
    let half = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let inv_half = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    let sqrt = &eig.eigenvectors * half * eig.eigenvectors.transpose();
    let inv_sqrt = &eig.eigenvectors * inv_half * eig.eigenvectors.transpose();
    Some((sqrt, inv_sqrt))
}

/// Sorted thin SVD: returns (U, singular values, V) with singular values in
/// decreasing order.
pub fn sorted_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let mut svd = m.clone().svd(true, true);
    svd.sort_by_singular_values();
    let u = svd.u.expect("svd with u");
    let v = svd.v_t.expect("svd with v_t").transpose();
    (u, svd.singular_values, v)
}

/// Truncate a matrix to rank `r` via its SVD.
pub fn truncated_svd_rank(m: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let k = r.min(m.nrows()).min(m.ncols());
    let (u, s, v) = sorted_svd(m);
    let u_r = u.columns(0, k);
    let v_r = v.columns(0, k);
    let s_r = DMatrix::from_diagonal(&s.rows(0, k).into_owned());
    &u_r * s_r * v_r.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sym_sqrt_roundtrip() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let (s, si) = sym_sqrt_pair(&a).unwrap();
        let back = &s * &s;
        let ident = &s * &si;
        assert!((back - &a).abs().max() < 1e-12);
        assert!((ident - DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-12);
    }

    #[test]
    fn truncated_svd_keeps_top_component() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 2.0, 1.0]));
        let t = truncated_svd_rank(&m, 1);
        assert!((t[(0, 0)] - 4.0).abs() < 1e-12);
        assert!(t[(1, 1)].abs() < 1e-12);
    }
}
