//! Ordinary least squares with an intercept, via column-pivoted Householder
//! QR. Rank deficiency at relative tolerance 1e-10 is an identifiability
//! error naming the dependent columns.

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::{lstsq_col_pivoted, ColMatrix, LstsqOutcome};
use crate::scalar::Scalar;

use super::{FitConfig, LinearModel};

const RANK_REL_TOL: f64 = 1e-10;

/// Fits `y ≈ b + Φθ` by least squares. Requires `n > p` and full column rank
/// of `[1 | Φ]`. Works on the features as given (raw or standardized); OLS is
/// scale-equivariant so no standardization is forced.
pub fn fit_ols<F: Scalar>(fm: &FeatureMatrix<F>) -> Result<LinearModel<F>> {
    let n = fm.n_rows();
    let p = fm.n_cols();
    if n <= p {
        return Err(Error::Identifiability {
            message: format!("need more observations than predictors (n={n}, p={p})"),
            columns: vec![],
        });
    }
    // augmented design [1 | Φ]
    let aug = ColMatrix::from_fn(n, p + 1, |i, j| {
        if j == 0 {
            F::one()
        } else {
            fm.value(i, j - 1)
        }
    });
    match lstsq_col_pivoted(&aug, fm.target(), F::cast(RANK_REL_TOL)) {
        LstsqOutcome::Solution(beta) => Ok(LinearModel {
            intercept: beta[0],
            coefficients: beta[1..].to_vec(),
            feature_names: fm.columns().to_vec(),
            scaling: fm.scaling().map(|s| s.to_vec()),
            target_transform: fm.target_transform(),
            fit_config: FitConfig::Ols,
            provenance: None,
        }),
        LstsqOutcome::RankDeficient { rank, dependent } => {
            let columns: Vec<String> = dependent
                .iter()
                .map(|&j| {
                    if j == 0 {
                        "(intercept)".to_string()
                    } else {
                        fm.columns()[j - 1].clone()
                    }
                })
                .collect();
            Err(Error::Identifiability {
                message: format!("rank {rank} < {} at relative tolerance {RANK_REL_TOL}", p + 1),
                columns,
            })
        }
    }
}
