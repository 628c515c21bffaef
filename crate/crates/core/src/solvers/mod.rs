//! Regularized linear estimation: ordinary least squares, elastic net by
//! cyclic coordinate descent, fused-lasso by ADMM over an exact 1-D
//! total-variation proximal operator, plus prediction and stationarity
//! certificates.
//!
//! Conventions, fixed across the crate:
//!
//! * the residual sum of squares is *not* scaled by `1/(2n)`, so penalty
//!   weights are dataset-size dependent;
//! * the elastic-net penalty is `λ((1−α)/2·‖θ‖₂² + α·‖θ‖₁)` with the squared
//!   2-norm, which keeps the coordinate updates in closed form;
//! * the intercept is never penalized and is updated in closed form;
//! * fits that require standardized predictors standardize internally when
//!   handed raw features and store the statistics on the model.

mod elastic_net;
mod fused;
mod ols;
mod tv;

pub use elastic_net::{fit_elastic_net, fit_elastic_net_warm, lambda_max};
pub use fused::fit_fused_lasso;
pub use ols::fit_ols;
pub use tv::{piece_count, tv_prox_1d};

use std::borrow::Cow;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{standardize, ColumnScaling, FeatureMatrix, TargetTransform};
use crate::linalg::dot;
use crate::scalar::{self, Scalar};

/// Elastic-net fit configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ENConfig<F> {
    pub lambda: F,
    pub alpha: F,
    /// Convergence threshold on both the max per-sweep coefficient change and
    /// the stationarity residual.
    pub tolerance: F,
    pub max_sweeps: usize,
}

impl<F: Scalar> ENConfig<F> {
    pub fn new(lambda: F, alpha: F) -> Self {
        ENConfig {
            lambda,
            alpha,
            tolerance: F::cast(1e-8),
            max_sweeps: 100_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda < F::zero() || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "elastic net lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if self.alpha < F::zero() || self.alpha > F::one() {
            return Err(Error::Config(format!(
                "elastic net alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.tolerance <= F::zero() {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Fused-lasso fit configuration: `λ1` weights sparsity, `λ2` weights the
/// fusion of adjacent coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedLassoConfig<F> {
    pub lambda1: F,
    pub lambda2: F,
    /// ADMM penalty parameter; held fixed across iterations.
    pub admm_rho: F,
    /// Threshold on both the primal and dual residual norms.
    pub tolerance: F,
    pub max_iters: usize,
}

impl<F: Scalar> FusedLassoConfig<F> {
    pub fn new(lambda1: F, lambda2: F) -> Self {
        FusedLassoConfig {
            lambda1,
            lambda2,
            admm_rho: F::one(),
            tolerance: F::cast(1e-8),
            max_iters: 50_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < F::zero() || self.lambda2 < F::zero() {
            return Err(Error::Config(format!(
                "fused lasso penalties must be nonnegative, got lambda1={} lambda2={}",
                self.lambda1, self.lambda2
            )));
        }
        if self.admm_rho <= F::zero() {
            return Err(Error::Config("admm_rho must be positive".into()));
        }
        if self.tolerance <= F::zero() {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Configuration a model was fitted with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitConfig<F> {
    Ols,
    ElasticNet(ENConfig<F>),
    FusedLasso(FusedLassoConfig<F>),
}

/// Cross-validation provenance stored on a final model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitProvenance<F> {
    pub cv_seed: u64,
    pub k: usize,
    pub param_names: (String, String),
    pub grid: Vec<(F, F)>,
    pub per_fold_errors: Vec<Vec<F>>,
    pub mean_errors: Vec<F>,
    pub best_point: (F, F),
}

/// A fitted linear model: the single prediction artifact for OLS, ridge,
/// elastic-net, and fused-lasso fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel<F> {
    pub coefficients: Vec<F>,
    pub intercept: F,
    pub feature_names: Vec<String>,
    /// Training standardization statistics; predictions on raw inputs reuse
    /// them. `None` when the model was fitted on unscaled predictors.
    pub scaling: Option<Vec<ColumnScaling<F>>>,
    pub target_transform: TargetTransform,
    pub fit_config: FitConfig<F>,
    #[serde(default = "none_provenance")]
    pub provenance: Option<FitProvenance<F>>,
}

fn none_provenance<F>() -> Option<FitProvenance<F>> {
    None
}

impl<F: Scalar> LinearModel<F> {
    pub fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    /// Coefficients on the raw-feature scale (undoing standardization).
    pub fn raw_scale_coefficients(&self) -> Vec<F> {
        match &self.scaling {
            Some(scaling) => self
                .coefficients
                .iter()
                .zip(scaling)
                .map(|(&c, s)| c / s.std)
                .collect(),
            None => self.coefficients.clone(),
        }
    }
}

/// `sign(z)·max(|z| − γ, 0)`
pub fn soft_threshold<F: Scalar>(z: F, gamma: F) -> F {
    debug_assert!(gamma >= F::zero());
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        F::zero()
    }
}

/// Returns a standardized view of the features: borrowed when already
/// standardized, freshly standardized otherwise.
pub(crate) fn ensure_standardized<F: Scalar>(
    fm: &FeatureMatrix<F>,
) -> Result<Cow<'_, FeatureMatrix<F>>> {
    if fm.scaling().is_some() {
        Ok(Cow::Borrowed(fm))
    } else {
        Ok(Cow::Owned(standardize(fm)?))
    }
}

fn check_schema<F: Scalar>(model: &LinearModel<F>, fm: &FeatureMatrix<F>) -> Result<()> {
    if model.feature_names == fm.columns() {
        return Ok(());
    }
    let missing: Vec<&String> = model
        .feature_names
        .iter()
        .filter(|n| !fm.columns().contains(n))
        .collect();
    let extra: Vec<&String> = fm
        .columns()
        .iter()
        .filter(|n| !model.feature_names.contains(n))
        .collect();
    let detail = if missing.is_empty() && extra.is_empty() {
        "column order differs from the model's feature order".to_string()
    } else {
        format!("missing columns {missing:?}; unexpected columns {extra:?}")
    };
    Err(Error::Schema(detail))
}

/// Scaled predictor value for row `i`, column `j`: applies the model's
/// training statistics when the matrix is raw, uses values as stored when the
/// caller already standardized.
fn scaled_value<F: Scalar>(model: &LinearModel<F>, fm: &FeatureMatrix<F>, i: usize, j: usize) -> F {
    let x = fm.value(i, j);
    match (&model.scaling, fm.scaling()) {
        (Some(scaling), None) => scaling[j].apply(x),
        _ => x,
    }
}

/// Predictions on the transformed (model) scale: `ŷ = intercept + Z·θ`.
pub fn predict_transformed<F: Scalar>(
    model: &LinearModel<F>,
    fm: &FeatureMatrix<F>,
) -> Result<Vec<F>> {
    check_schema(model, fm)?;
    let mut out = Vec::with_capacity(fm.n_rows());
    for i in 0..fm.n_rows() {
        let mut acc = model.intercept;
        for (j, &theta) in model.coefficients.iter().enumerate() {
            acc += theta * scaled_value(model, fm, i, j);
        }
        out.push(acc);
    }
    Ok(out)
}

/// Predictions with the inverse target transform applied (cycles for a
/// log10-transformed target; identical to [`predict_transformed`] for the
/// identity transform).
pub fn predict<F: Scalar>(model: &LinearModel<F>, fm: &FeatureMatrix<F>) -> Result<Vec<F>> {
    let latent = predict_transformed(model, fm)?;
    Ok(latent
        .into_iter()
        .map(|z| model.target_transform.inverse(z))
        .collect())
}

/// Maximum violation of the stationarity conditions of the model's objective
/// at its fitted coefficients; 0 at an exact optimum.
///
/// For the elastic net this is the per-coordinate subgradient check; for the
/// fused lasso the fusion dual variables are propagated as intervals along
/// the coefficient chain. The intercept's gradient is included in both.
#[allow(clippy::needless_range_loop)]
pub fn kkt_residual<F: Scalar>(model: &LinearModel<F>, fm: &FeatureMatrix<F>) -> Result<F> {
    check_schema(model, fm)?;
    let n = fm.n_rows();
    let p = fm.n_cols();
    // residuals on the scaled predictors
    let mut r: Vec<F> = fm.target().to_vec();
    for v in r.iter_mut() {
        *v -= model.intercept;
    }
    for i in 0..n {
        for (j, &theta) in model.coefficients.iter().enumerate() {
            r[i] -= theta * scaled_value(model, fm, i, j);
        }
    }
    // gradient of the residual sum of squares wrt each coefficient
    let two = F::cast(2.0);
    let grad: Vec<F> = (0..p)
        .map(|j| {
            let mut g = F::zero();
            for i in 0..n {
                g += scaled_value(model, fm, i, j) * r[i];
            }
            -two * g
        })
        .collect();
    let intercept_violation = (two * scalar::sum(&r)).abs();

    let coef_violation = match &model.fit_config {
        FitConfig::Ols => grad
            .iter()
            .fold(F::zero(), |acc, g| acc.max(g.abs())),
        FitConfig::ElasticNet(cfg) => {
            en_stationarity(&model.coefficients, &grad, cfg.lambda, cfg.alpha)
        }
        FitConfig::FusedLasso(cfg) => {
            fused_stationarity(&model.coefficients, &grad, cfg.lambda1, cfg.lambda2)
        }
    };
    Ok(coef_violation.max(intercept_violation))
}

pub(crate) fn en_stationarity<F: Scalar>(theta: &[F], grad: &[F], lambda: F, alpha: F) -> F {
    let mut worst = F::zero();
    for (&t, &g) in theta.iter().zip(grad) {
        let v = if t != F::zero() {
            (g + lambda * (F::one() - alpha) * t + lambda * alpha * t.signum()).abs()
        } else {
            (g.abs() - lambda * alpha).max(F::zero())
        };
        worst = worst.max(v);
    }
    worst
}

/// Stationarity violation for `RSS + λ1‖θ‖₁ + λ2·Σ|θ_{j+1} − θ_j|`.
///
/// The optimality system couples coordinates through the fusion dual
/// variables `u_j = λ2·t_j`, `t_j ∈ ∂|θ_{j+1} − θ_j|`, with
/// `u_j = u_{j−1} + g_j + λ1·s_j`, `u` pinned to `±λ2` across strict jumps,
/// free in `[−λ2, λ2]` across ties, and 0 at both ends. Feasible sets are
/// propagated as intervals; the residual is the largest clamp distance.
pub(crate) fn fused_stationarity<F: Scalar>(theta: &[F], grad: &[F], l1: F, l2: F) -> F {
    let p = theta.len();
    if p == 0 {
        return F::zero();
    }
    let mut worst = F::zero();
    let (mut lo, mut hi) = (F::zero(), F::zero()); // interval for u_{j-1}
    for j in 0..p {
        let (s_lo, s_hi) = if theta[j] != F::zero() {
            let s = l1 * theta[j].signum();
            (s, s)
        } else {
            (-l1, l1)
        };
        let r_lo = lo + grad[j] + s_lo;
        let r_hi = hi + grad[j] + s_hi;
        // constraint set for u_j
        let (c_lo, c_hi) = if j + 1 == p {
            (F::zero(), F::zero())
        } else if theta[j + 1] != theta[j] {
            let u = l2 * (theta[j + 1] - theta[j]).signum();
            (u, u)
        } else {
            (-l2, l2)
        };
        if r_lo > c_hi {
            worst = worst.max(r_lo - c_hi);
            lo = c_hi;
            hi = c_hi;
        } else if r_hi < c_lo {
            worst = worst.max(c_lo - r_hi);
            lo = c_lo;
            hi = c_lo;
        } else {
            lo = r_lo.max(c_lo);
            hi = r_hi.min(c_hi);
        }
    }
    worst
}

/// Objective value of the model's own fit problem at given coefficients, on
/// standardized predictors. Used by the equivalence tests.
pub fn objective_value<F: Scalar>(
    fm: &FeatureMatrix<F>,
    theta: &[F],
    intercept: F,
    config: &FitConfig<F>,
) -> F {
    let n = fm.n_rows();
    let mut rss = F::zero();
    for i in 0..n {
        let mut pred = intercept;
        for (j, &t) in theta.iter().enumerate() {
            pred += t * fm.value(i, j);
        }
        let e = fm.target()[i] - pred;
        rss += e * e;
    }
    match config {
        FitConfig::Ols => rss,
        FitConfig::ElasticNet(cfg) => {
            let l2: F = theta.iter().fold(F::zero(), |acc, &t| acc + t * t);
            let l1: F = theta.iter().fold(F::zero(), |acc, &t| acc + t.abs());
            rss + cfg.lambda * ((F::one() - cfg.alpha) / F::cast(2.0) * l2 + cfg.alpha * l1)
        }
        FitConfig::FusedLasso(cfg) => {
            let l1: F = theta.iter().fold(F::zero(), |acc, &t| acc + t.abs());
            let tv: F = theta
                .windows(2)
                .fold(F::zero(), |acc, w| acc + (w[1] - w[0]).abs());
            rss + cfg.lambda1 * l1 + cfg.lambda2 * tv
        }
    }
}

/// Serializes a model to its self-contained text document (JSON). Floats are
/// printed in the shortest form that parses back to the identical bits, so
/// the document round-trips exactly.
pub fn model_to_string<F: Scalar>(model: &LinearModel<F>) -> Result<String> {
    serde_json::to_string_pretty(model)
        .map_err(|e| Error::Schema(format!("model serialization failed: {e}")))
}

pub fn model_from_str<F: Scalar>(text: &str) -> Result<LinearModel<F>> {
    serde_json::from_str(text).map_err(|e| Error::Schema(format!("model parse failed: {e}")))
}

pub fn save_model<F: Scalar>(model: &LinearModel<F>, path: impl AsRef<Path>) -> Result<()> {
    let text = model_to_string(model)?;
    crate::dataset::write_text(path.as_ref(), &text)
}

pub fn load_model<F: Scalar>(path: impl AsRef<Path>) -> Result<LinearModel<F>> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
    model_from_str(&text)
}

/// Shared helper: residual vector `y − b − Z·θ` over stored (already scaled)
/// values.
pub(crate) fn residuals<F: Scalar>(fm: &FeatureMatrix<F>, theta: &[F], intercept: F) -> Vec<F> {
    let mut r: Vec<F> = fm.target().to_vec();
    for v in r.iter_mut() {
        *v -= intercept;
    }
    for (j, &t) in theta.iter().enumerate() {
        if t != F::zero() {
            for (ri, &z) in r.iter_mut().zip(fm.column(j)) {
                *ri -= t * z;
            }
        }
    }
    r
}

pub(crate) fn gradient_rss<F: Scalar>(fm: &FeatureMatrix<F>, r: &[F]) -> Vec<F> {
    let two = F::cast(2.0);
    (0..fm.n_cols())
        .map(|j| -two * dot(fm.column(j), r))
        .collect()
}
