//! Post-fit enforcement of the identifiability conditions:
//! orthonormal factors (H'H/n = I), diagonal-decreasing loadings Gram with
//! a positive-leading-sign convention, and factors orthogonal to the
//! covariate column space.

use nalgebra::DMatrix;

use crate::error::{CoapError, Result};
use crate::linalg::sorted_svd;

/// Output of [`enforce_identifiability`].
#[derive(Debug, Clone)]
pub struct Identified {
    pub h: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Regression coefficient of the raw factors on Z, d x q.
    pub alpha_hat: DMatrix<f64>,
    /// E B' had fewer than q singular values above 1e-12 relative.
    pub degenerate_product: bool,
}

/// Rotate (H, B) into the identified frame.
///
/// Regresses H on Z to strip the covariate-explained component, takes the
/// top-q SVD of E B' = U S D', fixes column signs so the first element of
/// each column of D above 1e-8 in magnitude is positive, and returns
/// H' = sqrt(n) U, B' = D S / sqrt(n). The product H' B'' equals E B'
/// exactly because E B' has rank at most q.
pub fn enforce_identifiability(
    h: &DMatrix<f64>,
    b: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<Identified> {
    let n = h.nrows();
    let q = b.ncols();
    if h.ncols() != q {
        return Err(CoapError::DimensionMismatch {
            context: format!("H has {} columns but B has {}", h.ncols(), q),
        });
    }
    let ztz = z.transpose() * z;
    let chol = nalgebra::Cholesky::new(ztz).ok_or(CoapError::SingularCovariateGram)?;
    let alpha_hat = chol.solve(&(z.transpose() * h)); // d x q
    let e = h - z * &alpha_hat;
    let m = &e * b.transpose(); // n x p, rank <= q
    let (u, s, d) = sorted_svd(&m);
    let s_max = s[0].max(0.0);
    let above = s.iter().filter(|&&v| v > 1e-12 * s_max).count();
    let degenerate = above < q;

    let mut u_q = u.columns(0, q).into_owned();
    let mut d_q = d.columns(0, q).into_owned();
    // sign convention on the columns of D
    for k in 0..q {
        let lead = d_q.column(k).iter().find(|v| v.abs() > 1e-8).copied();
        if let Some(v) = lead {
            if v < 0.0 {
                u_q.column_mut(k).neg_mut();
                d_q.column_mut(k).neg_mut();
            }
        }
    }
    // The left singular vectors lie in the column space of E, which is
    // orthogonal to Z, but a direction with a tiny singular value s_k can
    // pick up a numerical component along Z of size ~ eps * s_max / s_k.
    // Re-project and re-orthonormalize so the orthogonality conditions
    // hold to machine precision even when some factors are weak.
    let correction = chol.solve(&(z.transpose() * &u_q));
    u_q -= z * correction;
    let qr = u_q.clone().qr();
    let mut q_mat = qr.q();
    let r_mat = qr.r();
    for k in 0..q {
        if r_mat[(k, k)] < 0.0 {
            q_mat.column_mut(k).neg_mut();
        }
    }
    u_q = q_mat;

    let sqrt_n = (n as f64).sqrt();
    let h_new = &u_q * sqrt_n;
    let mut b_new = d_q;
    for k in 0..q {
        b_new.column_mut(k).scale_mut(s[k] / sqrt_n);
    }
    Ok(Identified {
        h: h_new,
        b: b_new,
        alpha_hat,
        degenerate_product: degenerate,
    })
}
