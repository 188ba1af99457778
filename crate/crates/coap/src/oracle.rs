//! Independent numerical oracles used by the test suite to validate the
//! closed-form updates. These deliberately avoid the code paths they
//! check; speed is not a goal here.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoapError, Result};
use crate::model::{CountDataset, ModelParams, VariationalParams};
use crate::vem::compute_elbo;
use crate::vem::mstep::{beta_objective, beta_tilde};

/// Result of an oracle sweep.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub max_abs_error: f64,
    pub trials: usize,
    pub worst_case_input: String,
}

/// Safeguarded-Newton maximizer of
/// f(y) = x y - a e^y - (y - ell)^2 / (2 varsigma).
///
/// Returns the stationary point (root of x - a e^y - (y - ell)/varsigma)
/// with |residual| <= 1e-12, and f'' there (always negative).
pub fn numeric_argmax_fij(x: f64, a: f64, varsigma: f64, ell: f64) -> Result<(f64, f64)> {
    assert!(a > 0.0 && varsigma > 0.0);
    let g = |y: f64| x - a * y.exp() - (y - ell) / varsigma;
    // g is strictly decreasing; bracket the root by expansion
    let mut lo = ell.min((x + 0.5).ln() - a.ln()).min(0.0) - 1.0;
    let mut hi = ell.max(((x + 1.0) / a).ln()).max(0.0) + 1.0;
    let mut expand = 1.0;
    for _ in 0..200 {
        if g(lo) > 0.0 {
            break;
        }
        lo -= expand;
        expand *= 2.0;
    }
    expand = 1.0;
    for _ in 0..200 {
        if g(hi) < 0.0 {
            break;
        }
        hi += expand;
        expand *= 2.0;
    }
    if !(g(lo) > 0.0 && g(hi) < 0.0) {
        return Err(CoapError::InvalidSpec {
            context: format!("failed to bracket the stationary point for x={x}, a={a}"),
        });
    }
    let mut y = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gy = g(y);
        if gy.abs() <= 1e-12 {
            break;
        }
        if gy > 0.0 {
            lo = y;
        } else {
            hi = y;
        }
        let gpp = -a * y.exp() - 1.0 / varsigma;
        let newton = y - gy / gpp;
        y = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    let fpp = -a * y.exp() - 1.0 / varsigma;
    Ok((y, fpp))
}

/// Parameter block for [`finite_diff_elbo_grad`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradBlock {
    Loadings,
    Factors,
    Mu,
}

/// Central finite differences of the ELBO over one parameter block, with
/// relative step 1e-6. Returns the largest absolute gradient component.
pub fn finite_diff_elbo_grad(
    params: &ModelParams,
    gamma: &VariationalParams,
    data: &CountDataset,
    block: GradBlock,
) -> Result<OracleReport> {
    let elbo_at = |params: &ModelParams, gamma: &VariationalParams| -> Result<f64> {
        Ok(compute_elbo(params, gamma, data)?.0.total)
    };
    let mut max_abs = 0.0f64;
    let mut worst = String::new();
    let mut trials = 0usize;

    let mut probe = |value: f64,
                     set: &mut dyn FnMut(f64) -> (ModelParams, VariationalParams),
                     label: String|
     -> Result<()> {
        let step = 1e-6 * value.abs().max(1.0);
        let (p_plus, g_plus) = set(value + step);
        let (p_minus, g_minus) = set(value - step);
        let grad = (elbo_at(&p_plus, &g_plus)? - elbo_at(&p_minus, &g_minus)?) / (2.0 * step);
        trials += 1;
        if grad.abs() > max_abs {
            max_abs = grad.abs();
            worst = label;
        }
        Ok(())
    };

    match block {
        GradBlock::Loadings => {
            for j in 0..params.b.nrows() {
                for k in 0..params.b.ncols() {
                    let base = params.b[(j, k)];
                    probe(
                        base,
                        &mut |v| {
                            let mut p = params.clone();
                            p.b[(j, k)] = v;
                            (p, gamma.clone())
                        },
                        format!("b[{j},{k}]"),
                    )?;
                }
            }
        }
        GradBlock::Factors => {
            for i in 0..params.h.nrows() {
                for k in 0..params.h.ncols() {
                    let base = params.h[(i, k)];
                    probe(
                        base,
                        &mut |v| {
                            let mut p = params.clone();
                            p.h[(i, k)] = v;
                            (p, gamma.clone())
                        },
                        format!("h[{i},{k}]"),
                    )?;
                }
            }
        }
        GradBlock::Mu => {
            for i in 0..gamma.mu.nrows() {
                for j in 0..gamma.mu.ncols() {
                    let base = gamma.mu[(i, j)];
                    probe(
                        base,
                        &mut |v| {
                            let mut g = gamma.clone();
                            g.mu[(i, j)] = v;
                            (params.clone(), g)
                        },
                        format!("mu[{i},{j}]"),
                    )?;
                }
            }
        }
    }
    Ok(OracleReport {
        max_abs_error: max_abs,
        trials,
        worst_case_input: worst,
    })
}

/// Brute-force maximizer of the rank-constrained coefficient objective over
/// the factorization beta = L R', by alternating exact least-squares in L
/// and R from 20 random restarts. Tiny instances only.
pub fn brute_force_lowrank(
    ytilde: &DMatrix<f64>,
    z: &DMatrix<f64>,
    varsigma: &DVector<f64>,
    r: usize,
) -> Result<DMatrix<f64>> {
    let p = ytilde.ncols();
    let d = z.ncols();
    assert!(p <= 6 && d <= 4 && r <= 3, "oracle is for tiny instances");
    let w_inv_half = DMatrix::from_diagonal(&varsigma.map(|v| 1.0 / v.sqrt()));
    let w_half = DMatrix::from_diagonal(&varsigma.map(f64::sqrt));
    let yt_w = &w_inv_half * ytilde.transpose(); // p x n, whitened rows

    let mut rng = ChaCha8Rng::seed_from_u64(0x1bf5);
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    for _restart in 0..20 {
        use rand_distr::StandardNormal;
        let mut r_mat: DMatrix<f64> = DMatrix::from_fn(d, r, |_, _| rng.sample(StandardNormal));
        let mut l_w: DMatrix<f64> = DMatrix::zeros(p, r); // whitened L
        for _iter in 0..500 {
            // L-step: rows of yt_w regressed on M = Z R
            let m = z * &r_mat; // n x r
            let gram_m = m.transpose() * &m;
            let sol = match nalgebra::Cholesky::new(gram_m) {
                Some(c) => c.solve(&(m.transpose() * yt_w.transpose())), // r x p
                None => break,
            };
            l_w = sol.transpose();
            // R-step: given G = L_w, solve R' = (G'G)^-1 G' Yt_w Z (Z'Z)^-1
            let gram_g = l_w.transpose() * &l_w;
            let lhs = match nalgebra::Cholesky::new(gram_g) {
                Some(c) => c.solve(&(l_w.transpose() * &yt_w)), // r x n
                None => break,
            };
            let ztz = z.transpose() * z;
            let rt = match nalgebra::Cholesky::new(ztz) {
                Some(c) => c.solve(&(z.transpose() * lhs.transpose())), // d x r
                None => break,
            };
            let r_new = rt;
            let delta = (&r_new - &r_mat).abs().max();
            r_mat = r_new;
            if delta < 1e-12 {
                break;
            }
        }
        let beta = &w_half * &l_w * r_mat.transpose(); // p x d
        let obj = beta_objective(&beta, varsigma, ytilde, z);
        if best.as_ref().map_or(true, |(b, _)| obj > *b) {
            best = Some((obj, beta));
        }
    }
    Ok(best.expect("at least one restart").1)
}

/// Convenience wrapper exposing beta_tilde for oracle comparisons.
pub fn unconstrained_beta(ytilde: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    beta_tilde(ytilde, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vem::estep::e_step_entry;
    use crate::vem::mstep;

    #[test]
    fn stationary_at_prior_mean() {
        // x = a e^{ell} makes the residual vanish at y = ell.
        let ell = 0.8_f64;
        let a = 1.7;
        let x = (a * ell.exp()).round(); // keep x integral; root moves slightly
        let (y, fpp) = numeric_argmax_fij(x, a, 1.0, ell).unwrap();
        let resid = x - a * y.exp() - (y - ell);
        assert!(resid.abs() <= 1e-12);
        assert!(fpp < 0.0);
        // exact version with the non-integral x
        let x_exact = a * ell.exp();
        let (y2, _) = numeric_argmax_fij(x_exact, a, 1.0, ell).unwrap();
        assert!((y2 - ell).abs() < 1e-12);
    }

    #[test]
    fn bisection_reference_root() {
        let (y, fpp) = numeric_argmax_fij(2.0, 1.0, 1.0, 0.0).unwrap();
        assert!((y - 0.4428).abs() < 1e-4);
        assert!(fpp < 0.0);
    }

    #[test]
    fn fpp_always_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let x = rng.gen_range(0..50) as f64;
            let a = rng.gen_range(0.1..20.0);
            let vs = rng.gen_range(0.1..10.0);
            let ell = rng.gen_range(-3.0..3.0);
            let (_, fpp) = numeric_argmax_fij(x, a, vs, ell).unwrap();
            assert!(fpp < 0.0);
        }
    }

    #[test]
    fn e_step_fixed_point_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let x = rng.gen_range(0..50) as f64;
            let a = rng.gen_range(0.1..20.0);
            let vs = rng.gen_range(0.1..10.0);
            let ell = rng.gen_range(-3.0..3.0);
            let (y_star, fpp) = numeric_argmax_fij(x, a, vs, ell).unwrap();
            let mut y = ell;
            let mut s2 = 0.0;
            for _ in 0..200 {
                let out = e_step_entry(x, a, vs, ell, y);
                y = out.0;
                s2 = out.1;
            }
            assert!((y - y_star).abs() <= 1e-6, "x={x} a={a} vs={vs} ell={ell}");
            assert!((s2 - (-1.0 / fpp)).abs() <= 1e-6);
        }
    }

    fn random_state(
        rng: &mut ChaCha8Rng,
        n: usize,
        p: usize,
        d: usize,
        q: usize,
    ) -> (ModelParams, VariationalParams, CountDataset) {
        use rand_distr::StandardNormal;
        let randn = |rng: &mut ChaCha8Rng, nr: usize, nc: usize| {
            DMatrix::from_fn(nr, nc, |_, _| rng.sample::<f64, _>(StandardNormal))
        };
        let mut z = randn(rng, n, d);
        z.column_mut(0).fill(1.0);
        let params = ModelParams {
            beta: randn(rng, p, d) * 0.3,
            b: randn(rng, p, q) * 0.5,
            h: randn(rng, n, q),
            varsigma: DVector::from_fn(p, |j, _| 0.5 + 0.2 * j as f64),
        };
        let gamma = VariationalParams {
            mu: randn(rng, n, p) * 0.5,
            sigma2: DMatrix::from_element(n, p, 0.3),
        };
        let x = DMatrix::from_fn(n, p, |_, _| rng.gen_range(0..6) as f64);
        let data = CountDataset::with_unit_offsets(x, z);
        (params, gamma, data)
    }

    #[test]
    fn closed_form_loadings_are_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (mut params, gamma, data) = random_state(&mut rng, 8, 5, 2, 2);
        params.b = mstep::update_loadings(&gamma, &params, &data.z).unwrap();
        let rep = finite_diff_elbo_grad(&params, &gamma, &data, GradBlock::Loadings).unwrap();
        assert!(rep.max_abs_error <= 1e-4, "grad {}", rep.max_abs_error);
    }

    #[test]
    fn closed_form_factors_are_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut params, gamma, data) = random_state(&mut rng, 8, 5, 2, 2);
        params.h = mstep::update_factors(&gamma, &params, &data.z).unwrap();
        let rep = finite_diff_elbo_grad(&params, &gamma, &data, GradBlock::Factors).unwrap();
        assert!(rep.max_abs_error <= 1e-4, "grad {}", rep.max_abs_error);
    }

    #[test]
    fn perturbed_loadings_are_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (mut params, gamma, data) = random_state(&mut rng, 8, 5, 2, 2);
        params.b = mstep::update_loadings(&gamma, &params, &data.z).unwrap();
        params.b[(0, 0)] += 0.5;
        let rep = finite_diff_elbo_grad(&params, &gamma, &data, GradBlock::Loadings).unwrap();
        assert!(rep.max_abs_error > 1e-2, "grad {}", rep.max_abs_error);
    }

    #[test]
    fn brute_force_full_rank_matches_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        use rand_distr::StandardNormal;
        let n = 10;
        let (p, d) = (3, 2);
        let mut z = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        z.column_mut(0).fill(1.0);
        let ytilde = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let vs = DVector::from_vec(vec![0.5, 1.0, 2.0]);
        let beta = brute_force_lowrank(&ytilde, &z, &vs, 2).unwrap();
        let bt = unconstrained_beta(&ytilde, &z).unwrap();
        assert!((beta - bt).abs().max() < 1e-6);
    }

    #[test]
    fn brute_force_matches_projection_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        use rand_distr::StandardNormal;
        let n = 12;
        let (p, d, r) = (4, 3, 2);
        let mut z = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        z.column_mut(0).fill(1.0);
        let ytilde = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let vs = DVector::from_fn(p, |j, _| 0.4 + 0.3 * j as f64);
        let beta_bf = brute_force_lowrank(&ytilde, &z, &vs, r).unwrap();
        let params = ModelParams {
            beta: DMatrix::zeros(p, d),
            b: DMatrix::zeros(p, 1),
            h: DMatrix::zeros(n, 1),
            varsigma: vs.clone(),
        };
        let gamma = VariationalParams {
            mu: ytilde.clone(),
            sigma2: DMatrix::from_element(n, p, 0.1),
        };
        let beta_cf = mstep::update_beta_separate(&gamma, &params, &z, r).unwrap();
        let obj_bf = beta_objective(&beta_bf, &vs, &ytilde, &z);
        let obj_cf = beta_objective(&beta_cf, &vs, &ytilde, &z);
        assert!((obj_bf - obj_cf).abs() <= 1e-4, "bf {obj_bf} cf {obj_cf}");
    }

    #[test]
    fn brute_force_invariant_to_weight_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        use rand_distr::StandardNormal;
        let n = 10;
        let (p, d, r) = (4, 3, 2);
        let mut z = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        z.column_mut(0).fill(1.0);
        let ytilde = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let vs = DVector::from_fn(p, |j, _| 0.4 + 0.3 * j as f64);
        let beta1 = brute_force_lowrank(&ytilde, &z, &vs, r).unwrap();
        let beta2 = brute_force_lowrank(&ytilde, &z, &(vs * 3.0), r).unwrap();
        assert!((beta1 - beta2).abs().max() < 1e-6);
    }
}
