//! Fused lasso over an ordered predictor domain, by ADMM.
//!
//! Objective: `‖y − b·1 − Zθ‖₂² + λ1·‖θ‖₁ + λ2·Σ|θ_{j+1} − θ_j|` over
//! standardized predictors whose column order follows the continuous domain
//! (the voltage grid). The splitting is `θ = z`; the z-subproblem is the
//! proximal map of the combined fusion+sparsity penalty, which factors into
//! the exact total-variation prox followed by soft thresholding.

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::{cholesky, dot, norm2, CholeskyFactor, ColMatrix};
use crate::scalar::{self, Scalar};

use super::{ensure_standardized, soft_threshold, tv_prox_1d, FitConfig, FusedLassoConfig, LinearModel};

/// Solver for `(2 ZᵀZ + ρI) x = w`, factored once. When `p > n` the
/// Sherman–Morrison–Woodbury form is used so only an `n×n` factor is needed:
/// `x = w/ρ − Zᵀ[((ρ/2)I + Z Zᵀ)⁻¹ (Z w)]/ρ`.
enum XSolver<F> {
    Direct(CholeskyFactor<F>),
    Woodbury { factor: CholeskyFactor<F>, rho: F },
}

impl<F: Scalar> XSolver<F> {
    fn build(z: &ColMatrix<F>, rho: F) -> Result<Self> {
        let n = z.nrows();
        let p = z.ncols();
        let two = F::cast(2.0);
        if p <= n {
            let mut a = z.gram();
            for i in 0..p {
                for j in 0..p {
                    let v = two * a.get(i, j) + if i == j { rho } else { F::zero() };
                    a.set(i, j, v);
                }
            }
            let factor = cholesky(&a).ok_or_else(|| {
                Error::CrossValidation("ADMM system factorization failed".into())
            })?;
            Ok(XSolver::Direct(factor))
        } else {
            let mut m = z.outer_gram();
            let half_rho = rho / two;
            for i in 0..n {
                m.set(i, i, m.get(i, i) + half_rho);
            }
            let factor = cholesky(&m).ok_or_else(|| {
                Error::CrossValidation("ADMM system factorization failed".into())
            })?;
            Ok(XSolver::Woodbury { factor, rho })
        }
    }

    fn solve(&self, z: &ColMatrix<F>, w: &[F]) -> Vec<F> {
        match self {
            XSolver::Direct(factor) => factor.solve(w),
            XSolver::Woodbury { factor, rho } => {
                let zw = z.matvec(w);
                let s = factor.solve(&zw);
                let zts = z.tr_matvec(&s);
                w.iter()
                    .zip(&zts)
                    .map(|(&wi, &ci)| (wi - ci) / *rho)
                    .collect()
            }
        }
    }
}

/// Fits the fused lasso. Raw features are standardized internally; columns
/// must already be in domain order.
pub fn fit_fused_lasso<F: Scalar>(
    fm: &FeatureMatrix<F>,
    cfg: &FusedLassoConfig<F>,
) -> Result<LinearModel<F>> {
    cfg.validate()?;
    let fm_std = ensure_standardized(fm)?;
    let z_mat = fm_std.values();
    let n = fm_std.n_rows();
    let p = fm_std.n_cols();
    if n == 0 || p == 0 {
        return Err(Error::Feature("empty feature matrix".into()));
    }
    let two = F::cast(2.0);
    let rho = cfg.admm_rho;

    let y_mean = scalar::mean(fm_std.target());
    let y_centered: Vec<F> = fm_std.target().iter().map(|&y| y - y_mean).collect();
    let atb: Vec<F> = (0..p)
        .map(|j| two * dot(z_mat.col(j), &y_centered))
        .collect();

    let solver = XSolver::build(z_mat, rho)?;

    let mut zc = vec![F::zero(); p]; // consensus iterate (reported solution)
    let mut u = vec![F::zero(); p]; // scaled dual
    let mut primal = F::infinity();
    let mut dual = F::infinity();
    let mut converged = false;
    let mut iters = 0;

    while iters < cfg.max_iters {
        iters += 1;
        // x-update: (2ZᵀZ + ρI) x = 2Zᵀỹ + ρ(z − u)
        let w: Vec<F> = (0..p).map(|j| atb[j] + rho * (zc[j] - u[j])).collect();
        let x = solver.solve(z_mat, &w);
        // z-update: prox of (λ1‖·‖₁ + λ2 TV)/ρ at x + u
        let v: Vec<F> = x.iter().zip(&u).map(|(&a, &b)| a + b).collect();
        let fused = tv_prox_1d(&v, cfg.lambda2 / rho);
        let z_new: Vec<F> = fused
            .iter()
            .map(|&t| soft_threshold(t, cfg.lambda1 / rho))
            .collect();
        // dual update and residuals
        let mut pr = vec![F::zero(); p];
        let mut du = vec![F::zero(); p];
        for j in 0..p {
            pr[j] = x[j] - z_new[j];
            du[j] = rho * (z_new[j] - zc[j]);
            u[j] += pr[j];
        }
        primal = norm2(&pr);
        dual = norm2(&du);
        zc = z_new;
        if primal < cfg.tolerance && dual < cfg.tolerance {
            converged = true;
            break;
        }
    }

    if !converged {
        let grad = {
            let r = super::residuals(&fm_std, &zc, y_mean);
            super::gradient_rss(&fm_std, &r)
        };
        let kkt = super::fused_stationarity(&zc, &grad, cfg.lambda1, cfg.lambda2);
        return Err(Error::NonConvergence {
            iterations: iters,
            kkt: kkt.to_f64().unwrap_or(f64::NAN),
            primal: primal.to_f64().unwrap_or(f64::NAN),
            dual: dual.to_f64().unwrap_or(f64::NAN),
            coefficients: zc.iter().map(|t| t.to_f64().unwrap_or(f64::NAN)).collect(),
            intercept: y_mean.to_f64().unwrap_or(f64::NAN),
        });
    }

    // closed-form intercept given the final coefficients
    let fitted = z_mat.matvec(&zc);
    let intercept = scalar::mean(
        &fm_std
            .target()
            .iter()
            .zip(&fitted)
            .map(|(&y, &f)| y - f)
            .collect::<Vec<F>>(),
    );

    Ok(LinearModel {
        coefficients: zc,
        intercept,
        feature_names: fm_std.columns().to_vec(),
        scaling: fm_std.scaling().map(|s| s.to_vec()),
        target_transform: fm_std.target_transform(),
        fit_config: FitConfig::FusedLasso(*cfg),
        provenance: None,
    })
}
