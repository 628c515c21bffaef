//! Elastic net by cyclic coordinate descent.
//!
//! Objective: `‖y − b·1 − Z·θ‖₂² + λ((1−α)/2·‖θ‖₂² + α‖θ‖₁)` with an
//! unpenalized intercept `b`, over standardized predictors `Z`.
//!
//! Each coordinate update is the exact minimizer of the objective in that
//! coordinate, so the objective is non-increasing within and across sweeps.
//! Convergence requires both the max per-sweep coefficient change and the
//! stationarity residual to fall below the configured tolerance; the latter
//! makes the post-fit certificate contract hold by construction.

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::dot;
use crate::scalar::{self, Scalar};

use super::{
    en_stationarity, ensure_standardized, gradient_rss, residuals, soft_threshold, ENConfig,
    FitConfig, LinearModel,
};

pub(crate) struct CdFit<F> {
    pub theta: Vec<F>,
    pub intercept: F,
    pub sweeps: usize,
    pub kkt: F,
    pub converged: bool,
    /// Objective value at the end of every sweep; exercised by the
    /// monotonicity tests.
    #[allow(dead_code)]
    pub objective_trace: Vec<F>,
}

/// Cyclic coordinate descent on standardized predictors. Deterministic:
/// fixed column order, fixed intercept update at each sweep start.
pub(crate) fn coordinate_descent<F: Scalar>(
    fm: &FeatureMatrix<F>,
    cfg: &ENConfig<F>,
    init: Option<(&[F], F)>,
) -> CdFit<F> {
    let n = fm.n_rows();
    let p = fm.n_cols();
    let two = F::cast(2.0);
    let lambda = cfg.lambda;
    let alpha = cfg.alpha;
    let l1_weight = lambda * alpha;
    let l2_weight = lambda * (F::one() - alpha);

    let col_sq: Vec<F> = (0..p).map(|j| dot(fm.column(j), fm.column(j))).collect();
    let (mut theta, mut intercept) = match init {
        Some((t, b)) => (t.to_vec(), b),
        None => (vec![F::zero(); p], F::zero()),
    };
    let mut r = residuals(fm, &theta, intercept);

    let n_f = F::from_usize(n).unwrap();
    let mut trace = Vec::new();
    let mut kkt = F::infinity();
    let mut converged = false;
    let mut sweeps = 0;
    let mut prev_obj = F::infinity();

    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let mut delta_max = F::zero();

        // closed-form intercept update
        let shift = scalar::sum(&r) / n_f;
        intercept += shift;
        for ri in r.iter_mut() {
            *ri -= shift;
        }
        delta_max = delta_max.max(shift.abs());

        for j in 0..p {
            if col_sq[j] == F::zero() {
                continue;
            }
            let old = theta[j];
            let rho = dot(fm.column(j), &r) + col_sq[j] * old;
            let new = soft_threshold(two * rho, l1_weight) / (two * col_sq[j] + l2_weight);
            if new != old {
                let diff = new - old;
                for (ri, &z) in r.iter_mut().zip(fm.column(j)) {
                    *ri -= diff * z;
                }
                theta[j] = new;
            }
            delta_max = delta_max.max((new - old).abs());
        }

        let rss = dot(&r, &r);
        let l2: F = theta.iter().fold(F::zero(), |acc, &t| acc + t * t);
        let l1: F = theta.iter().fold(F::zero(), |acc, &t| acc + t.abs());
        let obj = rss + l2_weight / two * l2 + l1_weight * l1;
        debug_assert!(
            obj <= prev_obj + F::cast(1e-10) * (F::one() + prev_obj.abs()),
            "objective increased across a sweep: {prev_obj} -> {obj}"
        );
        prev_obj = obj;
        trace.push(obj);

        if delta_max < cfg.tolerance {
            let grad = gradient_rss(fm, &r);
            kkt = en_stationarity(&theta, &grad, lambda, alpha)
                .max((two * scalar::sum(&r)).abs());
            if kkt < cfg.tolerance {
                converged = true;
                break;
            }
        }
    }

    CdFit {
        theta,
        intercept,
        sweeps,
        kkt,
        converged,
        objective_trace: trace,
    }
}

fn finish_fit<F: Scalar>(
    fm_std: &FeatureMatrix<F>,
    cfg: &ENConfig<F>,
    fit: CdFit<F>,
) -> Result<LinearModel<F>> {
    if !fit.converged {
        return Err(Error::NonConvergence {
            iterations: fit.sweeps,
            kkt: fit.kkt.to_f64().unwrap_or(f64::NAN),
            primal: 0.0,
            dual: 0.0,
            coefficients: fit
                .theta
                .iter()
                .map(|t| t.to_f64().unwrap_or(f64::NAN))
                .collect(),
            intercept: fit.intercept.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(LinearModel {
        coefficients: fit.theta,
        intercept: fit.intercept,
        feature_names: fm_std.columns().to_vec(),
        scaling: fm_std.scaling().map(|s| s.to_vec()),
        target_transform: fm_std.target_transform(),
        fit_config: FitConfig::ElasticNet(*cfg),
        provenance: None,
    })
}

/// Fits the elastic net. Raw features are standardized internally and the
/// statistics stored on the model.
pub fn fit_elastic_net<F: Scalar>(
    fm: &FeatureMatrix<F>,
    cfg: &ENConfig<F>,
) -> Result<LinearModel<F>> {
    cfg.validate()?;
    let fm_std = ensure_standardized(fm)?;
    let fit = coordinate_descent(&fm_std, cfg, None);
    finish_fit(&fm_std, cfg, fit)
}

/// Fits with a warm start from a previous model (typically the solution at
/// the preceding, larger λ on a descending path). Converged answers agree
/// with a cold start to within the solver tolerance.
pub fn fit_elastic_net_warm<F: Scalar>(
    fm: &FeatureMatrix<F>,
    cfg: &ENConfig<F>,
    warm: &LinearModel<F>,
) -> Result<LinearModel<F>> {
    cfg.validate()?;
    let fm_std = ensure_standardized(fm)?;
    if warm.feature_names != fm_std.columns() {
        return Err(Error::Schema(
            "warm-start model has different feature columns".into(),
        ));
    }
    let fit = coordinate_descent(&fm_std, cfg, Some((&warm.coefficients, warm.intercept)));
    finish_fit(&fm_std, cfg, fit)
}

/// Smallest λ that zeroes every coefficient under this crate's objective:
/// `λ_max = 2·maxⱼ |Z_jᵀ(y − ȳ)| / α`, computed on standardized predictors.
/// Requires `α > 0` (the ridge limit has no finite full-shrinkage λ).
pub fn lambda_max<F: Scalar>(fm: &FeatureMatrix<F>, alpha: F) -> Result<F> {
    if alpha <= F::zero() {
        return Err(Error::Config(
            "lambda_max requires alpha > 0; pure ridge never fully shrinks".into(),
        ));
    }
    let fm_std = ensure_standardized(fm)?;
    let y_mean = scalar::mean(fm_std.target());
    let centered: Vec<F> = fm_std.target().iter().map(|&y| y - y_mean).collect();
    let mut worst = F::zero();
    for j in 0..fm_std.n_cols() {
        worst = worst.max(dot(fm_std.column(j), &centered).abs());
    }
    Ok(F::cast(2.0) * worst / alpha)
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Long-run proximal gradient on the identical objective; independent of
    //! the coordinate-descent path.

    use crate::linalg::ColMatrix;
    use crate::solvers::soft_threshold;

    /// Largest eigenvalue of `ZᵀZ` by power iteration.
    pub fn gram_spectral_norm(z: &ColMatrix<f64>) -> f64 {
        let p = z.ncols();
        let g = z.gram();
        let mut v = vec![1.0 / (p as f64).sqrt(); p];
        let mut lam = 0.0;
        for _ in 0..2000 {
            let w = g.matvec(&v);
            let nrm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nrm == 0.0 {
                return 0.0;
            }
            lam = nrm;
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / nrm;
            }
        }
        lam
    }

    /// Minimizes `‖ỹ − Zθ‖² + λ((1−α)/2‖θ‖² + α‖θ‖₁)` for centered `ỹ` by
    /// proximal gradient, run to an iterate change below `tol`.
    pub fn en_prox_grad(
        z: &ColMatrix<f64>,
        y_centered: &[f64],
        lambda: f64,
        alpha: f64,
        tol: f64,
        max_iters: usize,
    ) -> Vec<f64> {
        let p = z.ncols();
        let l2_weight = lambda * (1.0 - alpha);
        let lip = 2.0 * gram_spectral_norm(z) * 1.0000001 + l2_weight;
        let step = 1.0 / lip;
        let mut theta = vec![0.0; p];
        for _ in 0..max_iters {
            // gradient of the smooth part
            let mut r = y_centered.to_vec();
            for (j, &t) in theta.iter().enumerate() {
                if t != 0.0 {
                    for (ri, &zij) in r.iter_mut().zip(z.col(j)) {
                        *ri -= t * zij;
                    }
                }
            }
            let mut change: f64 = 0.0;
            let grad: Vec<f64> = (0..p)
                .map(|j| {
                    -2.0 * z.col(j).iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
                        + l2_weight * theta[j]
                })
                .collect();
            let new: Vec<f64> = theta
                .iter()
                .zip(&grad)
                .map(|(&t, &g)| soft_threshold(t - step * g, step * lambda * alpha))
                .collect();
            for (t, n) in theta.iter().zip(&new) {
                change = change.max((t - n).abs());
            }
            theta = new;
            if change < tol {
                break;
            }
        }
        theta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{standardize, TargetTransform};
    use crate::linalg::ColMatrix;
    use crate::solvers::{fit_ols, kkt_residual, objective_value, predict_transformed};
    use crate::solvers::test_support::random_matrix;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_penalty_matches_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fm = random_matrix(&mut rng, 24, 4);
        let en = fit_elastic_net(&fm, &ENConfig::new(0.0, 1.0)).unwrap();
        let std_fm = standardize(&fm).unwrap();
        let ols = fit_ols(&std_fm).unwrap();
        for (a, b) in en.coefficients.iter().zip(&ols.coefficients) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!((en.intercept - ols.intercept).abs() < 1e-6);
    }

    #[test]
    fn full_shrinkage_at_lambda_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let fm = random_matrix(&mut rng, 30, 5);
        let alpha = 0.7;
        let lmax = lambda_max(&fm, alpha).unwrap();
        let model = fit_elastic_net(&fm, &ENConfig::new(lmax * 1.000001, alpha)).unwrap();
        assert!(model.coefficients.iter().all(|&t| t == 0.0));
        let y_mean = fm.target().iter().sum::<f64>() / fm.n_rows() as f64;
        assert!((model.intercept - y_mean).abs() < 1e-10);
        // just below λ_max at least one coefficient is active
        let model = fit_elastic_net(&fm, &ENConfig::new(lmax * 0.99, alpha)).unwrap();
        assert!(model.coefficients.iter().any(|&t| t != 0.0));
    }

    #[test]
    fn ridge_limit_matches_closed_form() {
        // α = 0, λ > 0: (2 ZᵀZ + λI) θ = 2 Zᵀ(y − ȳ)
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fm = random_matrix(&mut rng, 25, 4);
        let lambda = 3.7;
        let model = fit_elastic_net(&fm, &ENConfig::new(lambda, 0.0)).unwrap();
        let fm_std = standardize(&fm).unwrap();
        let y_mean = fm_std.target().iter().sum::<f64>() / fm_std.n_rows() as f64;
        let centered: Vec<f64> = fm_std.target().iter().map(|y| y - y_mean).collect();
        let mut a = fm_std.values().gram();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                let v = a.get(i, j) * 2.0 + if i == j { lambda } else { 0.0 };
                a.set(i, j, v);
            }
        }
        let rhs: Vec<f64> = (0..fm_std.n_cols())
            .map(|j| 2.0 * dot(fm_std.column(j), &centered))
            .collect();
        let closed = crate::linalg::cholesky(&a).unwrap().solve(&rhs);
        for (a, b) in model.coefficients.iter().zip(&closed) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn objective_trace_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let fm = random_matrix(&mut rng, 20, 6);
        let fm_std = standardize(&fm).unwrap();
        let cfg = ENConfig::new(0.5, 0.6);
        let fit = coordinate_descent(&fm_std, &cfg, None);
        assert!(fit.converged);
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * (1.0 + w[0].abs()));
        }
    }

    #[test]
    fn matches_prox_grad_oracle_on_seeded_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..12 {
            let n = rng.random_range(10..=20);
            let p = rng.random_range(2..=8);
            let fm = random_matrix(&mut rng, n, p);
            let lambda = [0.01, 0.1, 1.0][trial % 3];
            let alpha = [0.2, 0.5, 1.0][(trial / 3) % 3];
            let cfg = ENConfig::new(lambda, alpha);
            let model = fit_elastic_net(&fm, &cfg).unwrap();

            let fm_std = standardize(&fm).unwrap();
            let y_mean = fm_std.target().iter().sum::<f64>() / n as f64;
            let centered: Vec<f64> = fm_std.target().iter().map(|y| y - y_mean).collect();
            let theta_o =
                oracle::en_prox_grad(fm_std.values(), &centered, lambda, alpha, 1e-12, 2_000_000);

            let cfg_enum = FitConfig::ElasticNet(cfg);
            let f_impl =
                objective_value(&fm_std, &model.coefficients, model.intercept, &cfg_enum);
            let f_oracle = objective_value(&fm_std, &theta_o, y_mean, &cfg_enum);
            assert!(
                (f_impl - f_oracle).abs() <= 1e-8 * f_oracle.abs().max(1.0),
                "trial {trial}: objective {f_impl} vs oracle {f_oracle}"
            );
            for (a, b) in model.coefficients.iter().zip(&theta_o) {
                assert!((a - b).abs() < 1e-6, "trial {trial}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn converged_fit_satisfies_stationarity_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let fm = random_matrix(&mut rng, 18, 5);
        let cfg = ENConfig::new(0.3, 0.8);
        let model = fit_elastic_net(&fm, &cfg).unwrap();
        let fm_std = standardize(&fm).unwrap();
        let kkt = kkt_residual(&model, &fm_std).unwrap();
        assert!(kkt < 10.0 * cfg.tolerance, "kkt {kkt}");
    }

    #[test]
    fn truncated_fit_reports_nonconvergence_with_high_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        // strongly correlated columns: duplicate plus noise
        let n = 30;
        let base: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let col2: Vec<f64> = base.iter().map(|v| v + rng.random_range(-0.01..0.01)).collect();
        let y: Vec<f64> = base.iter().map(|v| 3.0 * v + rng.random_range(-0.1..0.1)).collect();
        let fm = crate::features::FeatureMatrix::new(
            (0..n).map(|i| format!("c{i}")).collect(),
            vec!["a".into(), "b".into()],
            ColMatrix::from_columns(&[base, col2]),
            y,
            TargetTransform::Identity,
        )
        .unwrap();
        let cfg = ENConfig {
            lambda: 0.1,
            alpha: 1.0,
            tolerance: 1e-8,
            max_sweeps: 1,
        };
        match fit_elastic_net(&fm, &cfg) {
            Err(Error::NonConvergence { kkt, .. }) => {
                assert!(kkt > 1e-8, "kkt {kkt} should exceed the tolerance")
            }
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn oracle_solution_has_tiny_stationarity_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let fm = random_matrix(&mut rng, 16, 4);
        let fm_std = standardize(&fm).unwrap();
        let (lambda, alpha) = (0.2, 0.5);
        let y_mean = fm_std.target().iter().sum::<f64>() / fm_std.n_rows() as f64;
        let centered: Vec<f64> = fm_std.target().iter().map(|y| y - y_mean).collect();
        let theta_o =
            oracle::en_prox_grad(fm_std.values(), &centered, lambda, alpha, 1e-13, 5_000_000);
        let model = LinearModel {
            coefficients: theta_o,
            intercept: y_mean,
            feature_names: fm_std.columns().to_vec(),
            scaling: fm_std.scaling().map(|s| s.to_vec()),
            target_transform: TargetTransform::Identity,
            fit_config: FitConfig::ElasticNet(ENConfig::new(lambda, alpha)),
            provenance: None,
        };
        let kkt = kkt_residual(&model, &fm_std).unwrap();
        assert!(kkt < 1e-8, "kkt {kkt}");
    }

    #[test]
    fn warm_start_agrees_with_cold_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let fm = random_matrix(&mut rng, 22, 6);
        let lambdas = [2.0, 1.0, 0.5, 0.1, 0.02];
        let mut prev: Option<LinearModel<f64>> = None;
        for &l in &lambdas {
            let cfg = ENConfig::new(l, 0.9);
            let warm = match &prev {
                Some(m) => fit_elastic_net_warm(&fm, &cfg, m).unwrap(),
                None => fit_elastic_net(&fm, &cfg).unwrap(),
            };
            let cold = fit_elastic_net(&fm, &cfg).unwrap();
            for (a, b) in warm.coefficients.iter().zip(&cold.coefficients) {
                assert!((a - b).abs() < 10.0 * cfg.tolerance, "λ={l}: {a} vs {b}");
            }
            prev = Some(warm);
        }
    }

    #[test]
    fn training_residuals_sum_to_zero_without_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let fm = random_matrix(&mut rng, 15, 3);
        let model = fit_elastic_net(&fm, &ENConfig::new(0.0, 1.0)).unwrap();
        let preds = predict_transformed(&model, &fm).unwrap();
        let sum: f64 = preds
            .iter()
            .zip(fm.target())
            .map(|(p, y)| y - p)
            .sum();
        assert!(sum.abs() < 1e-8, "residual sum {sum}");
    }

    #[test]
    fn prediction_invariant_to_standardization_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let fm = random_matrix(&mut rng, 20, 4);
        let cfg = ENConfig::new(0.4, 0.6);
        // fit on raw (internal standardization) vs on pre-standardized
        let m_raw = fit_elastic_net(&fm, &cfg).unwrap();
        let fm_std = standardize(&fm).unwrap();
        let m_std = fit_elastic_net(&fm_std, &cfg).unwrap();
        let p1 = predict_transformed(&m_raw, &fm).unwrap();
        let p2 = predict_transformed(&m_std, &fm).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
