//! Predictive-performance metrics, residual reliability analysis, and
//! coefficient-uncertainty quantification.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::model_selection::FitterSpec;
use crate::scalar::{self, Scalar};

/// Which scale a metrics report was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricScale {
    /// The model's fitting scale (e.g. log10 cycles).
    Transformed,
    /// Cycles, after the inverse target transform.
    Cycles,
}

impl fmt::Display for MetricScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricScale::Transformed => write!(f, "transformed"),
            MetricScale::Cycles => write!(f, "cycles"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<F> {
    pub mse: F,
    pub rmse: F,
    pub r2: F,
    pub aape_percent: F,
    pub n: usize,
    pub scale: MetricScale,
}

/// Mean squared error, its root, `R² = 1 − SSE/SST`, and the average
/// absolute percent error `100·mean(|y−ŷ|/|y|)`.
pub fn compute_metrics<F: Scalar>(
    y: &[F],
    y_hat: &[F],
    scale: MetricScale,
) -> Result<MetricsReport<F>> {
    if y.len() != y_hat.len() {
        return Err(Error::Diagnostics(format!(
            "length mismatch: {} observed vs {} predicted",
            y.len(),
            y_hat.len()
        )));
    }
    if y.len() < 2 {
        return Err(Error::Diagnostics(
            "metrics need at least 2 observations".into(),
        ));
    }
    if y.iter().any(|&v| v == F::zero()) {
        return Err(Error::Diagnostics(
            "absolute percent error undefined for zero targets".into(),
        ));
    }
    let n = F::from_usize(y.len()).unwrap();
    let mut sse = F::zero();
    let mut abs_pct = F::zero();
    for (&yi, &pi) in y.iter().zip(y_hat) {
        let e = yi - pi;
        sse += e * e;
        abs_pct += (e / yi).abs();
    }
    let y_mean = scalar::mean(y);
    let sst = y
        .iter()
        .fold(F::zero(), |acc, &v| acc + (v - y_mean) * (v - y_mean));
    let mse = sse / n;
    let r2 = if sst == F::zero() {
        if sse == F::zero() {
            F::one()
        } else {
            F::neg_infinity()
        }
    } else {
        F::one() - sse / sst
    };
    Ok(MetricsReport {
        mse,
        rmse: mse.sqrt(),
        r2,
        aape_percent: F::cast(100.0) * abs_pct / n,
        n: y.len(),
        scale,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport<F> {
    pub residual_mean: F,
    pub chi_square_statistic: F,
    pub chi_square_p: F,
    pub degrees_of_freedom: usize,
    /// `(theoretical quantile, sample quantile)`, sorted by the first.
    pub qq_points: Vec<(F, F)>,
}

/// Goodness-of-fit of the residuals against a normal with the sample mean
/// and standard deviation, plus Q-Q data.
///
/// The χ² test uses equal-probability bins under the fitted normal and
/// `bins − 3` degrees of freedom (two estimated parameters plus one). Q-Q
/// theoretical quantiles are normal scores at `(i − ½)/n`, rescaled to the
/// score vector's own sample moments and then mapped by the residual sample
/// moments, so residuals that are an affine image of the scores land exactly
/// on the identity.
pub fn residual_diagnostics<F: Scalar>(residuals: &[F], bins: usize) -> Result<ResidualReport<F>> {
    let n = residuals.len();
    if n < 20 {
        return Err(Error::Diagnostics(format!(
            "residual diagnostics need at least 20 residuals, got {n}"
        )));
    }
    if bins < 5 {
        return Err(Error::Diagnostics(format!(
            "need at least 5 bins, got {bins}"
        )));
    }
    if n < 5 * bins {
        return Err(Error::Diagnostics(format!(
            "expected bin count {n}/{bins} < 5; use fewer bins"
        )));
    }
    let mean = scalar::mean(residuals);
    let std = scalar::sample_std(residuals);
    if std == F::zero() {
        return Err(Error::Diagnostics(
            "residuals are constant; diagnostics undefined".into(),
        ));
    }

    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    // χ² with equal-probability bins on standardized residuals
    let edges: Vec<f64> = (1..bins)
        .map(|i| normal.inverse_cdf(i as f64 / bins as f64))
        .collect();
    let mut observed = vec![0usize; bins];
    for &r in residuals {
        let z = ((r - mean) / std).to_f64().unwrap();
        let bin = edges.partition_point(|&e| e < z);
        observed[bin] += 1;
    }
    let expected = n as f64 / bins as f64;
    let stat: f64 = observed
        .iter()
        .map(|&o| {
            let d = o as f64 - expected;
            d * d / expected
        })
        .sum();
    let dof = bins - 3;
    let p = 1.0 - ChiSquared::new(dof as f64).expect("dof >= 2").cdf(stat);

    // Q-Q points
    let mut sorted: Vec<F> = residuals.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let scores: Vec<F> = (1..=n)
        .map(|i| F::cast(normal.inverse_cdf((i as f64 - 0.5) / n as f64)))
        .collect();
    let s_mean = scalar::mean(&scores);
    let s_std = scalar::sample_std(&scores);
    let qq_points: Vec<(F, F)> = scores
        .iter()
        .zip(&sorted)
        .map(|(&q, &r)| (mean + std * (q - s_mean) / s_std, r))
        .collect();

    Ok(ResidualReport {
        residual_mean: mean,
        chi_square_statistic: F::cast(stat),
        chi_square_p: F::cast(p.clamp(0.0, 1.0)),
        degrees_of_freedom: dof,
        qq_points,
    })
}

/// Percentile confidence interval for one coefficient, on the raw-feature
/// scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientCI<F> {
    pub feature: String,
    pub estimate: F,
    pub lower: F,
    pub upper: F,
    pub spans_zero: bool,
}

fn percentile<F: Scalar>(sorted: &[F], q: f64) -> F {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = F::cast(h - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Group-level bootstrap percentile intervals for every coefficient.
///
/// Groups (not cells) are resampled with replacement, matching the grouped
/// cross-validation rationale; hyperparameters stay fixed at `point`.
/// Per-resample seeds derive from a counter so the result is identical under
/// any thread count. Coefficients are compared on the raw-feature scale so
/// resample-specific standardization drops out.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_ci<F: Scalar>(
    fm: &FeatureMatrix<F>,
    groups: &BTreeMap<String, String>,
    fitter: &FitterSpec<F>,
    point: (F, F),
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<Vec<CoefficientCI<F>>> {
    if resamples < 200 {
        return Err(Error::Diagnostics(format!(
            "bootstrap needs at least 200 resamples, got {resamples}"
        )));
    }
    if !(0.0..1.0).contains(&level) || level <= 0.0 {
        return Err(Error::Diagnostics(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    if fm.scaling().is_some() {
        return Err(Error::Diagnostics(
            "pass unstandardized features; resample statistics are computed internally".into(),
        ));
    }
    // rows per group, in row order
    let mut group_rows: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, cell) in fm.rows().iter().enumerate() {
        let g = groups.get(cell).ok_or_else(|| {
            Error::Diagnostics(format!("cell {cell} has no group assignment"))
        })?;
        group_rows.entry(g.as_str()).or_default().push(i);
    }
    let group_list: Vec<&str> = group_rows.keys().copied().collect();
    let n_groups = group_list.len();

    let full_fit = fitter.fit(fm, point)?;
    let estimate = full_fit.raw_scale_coefficients();

    let draws: Vec<Option<Vec<F>>> = (0..resamples)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64 + 1);
            let mut rows = Vec::new();
            for _ in 0..n_groups {
                let g = group_list[rng.random_range(0..n_groups)];
                rows.extend_from_slice(&group_rows[g]);
            }
            let sub = fm.subset(&rows);
            match fitter.fit(&sub, point) {
                Ok(m) => Some(m.raw_scale_coefficients()),
                Err(_) => None, // counted as an unstable refit
            }
        })
        .collect();

    let failures = draws.iter().filter(|d| d.is_none()).count();
    if failures * 100 > resamples {
        return Err(Error::BootstrapUnstable {
            failures,
            total: resamples,
        });
    }
    let kept: Vec<&Vec<F>> = draws.iter().flatten().collect();

    let lo_q = (1.0 - level) / 2.0;
    let hi_q = 1.0 - lo_q;
    let mut out = Vec::with_capacity(fm.n_cols());
    for (j, name) in fm.columns().iter().enumerate() {
        let mut values: Vec<F> = kept.iter().map(|c| c[j]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lower = percentile(&values, lo_q);
        let upper = percentile(&values, hi_q);
        out.push(CoefficientCI {
            feature: name.clone(),
            estimate: estimate[j],
            lower,
            upper,
            spans_zero: lower < F::zero() && F::zero() < upper,
        });
    }
    Ok(out)
}

/// Sectioned delimited-text export: metrics blocks, residual list, Q-Q pairs,
/// and the coefficient-interval table.
pub struct DiagnosticsExport<'a, F> {
    pub metrics: &'a [(String, MetricsReport<F>)],
    pub residuals: &'a [(String, F)],
    pub residual_report: Option<&'a ResidualReport<F>>,
    pub coefficient_cis: &'a [CoefficientCI<F>],
    pub ci_level: f64,
}

impl<F: Scalar> DiagnosticsExport<'_, F> {
    pub fn to_text(&self) -> String {
        let mut t = String::new();
        t.push_str("# metrics\nsplit,scale,n,mse,rmse,r2,aape_percent\n");
        for (split, m) in self.metrics {
            t.push_str(&format!(
                "{split},{},{},{},{},{},{}\n",
                m.scale, m.n, m.mse, m.rmse, m.r2, m.aape_percent
            ));
        }
        t.push_str("\n# residuals (transformed scale)\ncell_id,residual\n");
        for (cell, r) in self.residuals {
            t.push_str(&format!("{cell},{r}\n"));
        }
        if let Some(rep) = self.residual_report {
            t.push_str(&format!(
                "\n# residual_normality\nresidual_mean,chi_square_statistic,chi_square_p,degrees_of_freedom\n{},{},{},{}\n",
                rep.residual_mean, rep.chi_square_statistic, rep.chi_square_p, rep.degrees_of_freedom
            ));
            t.push_str("\n# qq\ntheoretical,sample\n");
            for (q, s) in &rep.qq_points {
                t.push_str(&format!("{q},{s}\n"));
            }
        }
        if !self.coefficient_cis.is_empty() {
            t.push_str(&format!(
                "\n# coefficient_ci level={}\nfeature,estimate,lower,upper,spans_zero\n",
                self.ci_level
            ));
            for ci in self.coefficient_cis {
                t.push_str(&format!(
                    "{},{},{},{},{}\n",
                    ci.feature, ci.estimate, ci.lower, ci.upper, ci.spans_zero
                ));
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::TargetTransform;
    use crate::linalg::ColMatrix;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Exp, Normal as NormalDist};

    #[test]
    fn perfect_predictions_are_perfect_metrics() {
        let y = [100.0, 200.0, 321.5];
        let m = compute_metrics(&y, &y, MetricScale::Cycles).unwrap();
        assert_eq!(m.mse, 0.0);
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.r2, 1.0);
        assert_eq!(m.aape_percent, 0.0);
    }

    #[test]
    fn constant_mean_prediction_has_zero_r2() {
        let y = [1.0f64, 2.0, 3.0, 4.0];
        let mean = 2.5;
        let m = compute_metrics(&y, &[mean; 4], MetricScale::Transformed).unwrap();
        assert!(m.r2.abs() < 1e-15);
    }

    #[test]
    fn hand_computed_example() {
        let m = compute_metrics(&[100.0f64, 200.0], &[110.0, 180.0], MetricScale::Cycles).unwrap();
        assert!((m.mse - 250.0).abs() < 1e-12);
        assert!((m.rmse - 250.0f64.sqrt()).abs() < 1e-12);
        assert!((m.rmse - 15.8114).abs() < 1e-4);
        assert!((m.aape_percent - 10.0).abs() < 1e-12);
        // identity: rmse² = mse
        assert!((m.rmse * m.rmse - m.mse).abs() < 1e-12);
    }

    #[test]
    fn zero_target_rejected_for_aape() {
        assert!(compute_metrics(&[0.0, 1.0], &[0.1, 1.0], MetricScale::Cycles).is_err());
    }

    #[test]
    fn r2_invariant_under_common_shift() {
        let y = [3.0, -1.0, 2.0, 0.5, 9.0];
        let p = [2.5, -0.5, 2.2, 1.0, 8.0];
        let m1 = compute_metrics(&y, &p, MetricScale::Transformed).unwrap();
        let c = 17.3;
        let ys: Vec<f64> = y.iter().map(|v| v + c).collect();
        let ps: Vec<f64> = p.iter().map(|v| v + c).collect();
        let m2 = compute_metrics(&ys, &ps, MetricScale::Transformed).unwrap();
        assert!((m1.r2 - m2.r2).abs() < 1e-10);
    }

    #[test]
    fn qq_identity_when_residuals_are_scores() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = 200;
        let residuals: Vec<f64> = (1..=n)
            .map(|i| 3.0 * normal.inverse_cdf((i as f64 - 0.5) / n as f64) - 0.7)
            .collect();
        let rep = residual_diagnostics(&residuals, 10).unwrap();
        for (q, s) in &rep.qq_points {
            assert!((q - s).abs() < 1e-6, "{q} vs {s}");
        }
    }

    #[test]
    fn chi_square_accepts_normal_and_rejects_exponential() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(50);
        let gauss = NormalDist::new(0.0, 2.0).unwrap();
        let mut rejections = 0;
        for _ in 0..40 {
            let r: Vec<f64> = (0..1000).map(|_| gauss.sample(&mut rng)).collect();
            let rep = residual_diagnostics(&r, 10).unwrap();
            if rep.chi_square_p < 0.05 {
                rejections += 1;
            }
        }
        assert!(rejections <= 5, "{rejections} of 40 normal sets rejected");

        let exp = Exp::new(1.0).unwrap();
        let mut rejections = 0;
        for _ in 0..40 {
            let r: Vec<f64> = (0..1000).map(|_| exp.sample(&mut rng)).collect();
            let rep = residual_diagnostics(&r, 10).unwrap();
            if rep.chi_square_p < 0.01 {
                rejections += 1;
            }
        }
        assert_eq!(rejections, 40, "exponential residuals must be rejected");
    }

    #[test]
    fn chi_square_invariant_under_affine_rescaling() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(51);
        let gauss = NormalDist::new(0.0, 1.0).unwrap();
        let r: Vec<f64> = (0..400).map(|_| gauss.sample(&mut rng)).collect();
        let rep1 = residual_diagnostics(&r, 8).unwrap();
        let scaled: Vec<f64> = r.iter().map(|v| 13.0 * v - 5.0).collect();
        let rep2 = residual_diagnostics(&scaled, 8).unwrap();
        assert!(
            (rep1.chi_square_statistic - rep2.chi_square_statistic).abs() < 1e-10,
            "{} vs {}",
            rep1.chi_square_statistic,
            rep2.chi_square_statistic
        );
    }

    #[test]
    fn small_sample_or_bin_errors() {
        let r = vec![0.0; 19];
        assert!(residual_diagnostics(&r, 5).is_err());
        let r: Vec<f64> = (0..30).map(|i| i as f64).collect();
        assert!(residual_diagnostics(&r, 4).is_err());
        // 30 residuals cannot fill 7 bins at expected count 5
        assert!(residual_diagnostics(&r, 7).is_err());
    }

    fn groups_for(fm: &FeatureMatrix<f64>, per_group: usize) -> BTreeMap<String, String> {
        fm.rows()
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), format!("g{}", i / per_group)))
            .collect()
    }

    #[test]
    fn noiseless_linear_data_gives_degenerate_intervals() {
        let n = 24;
        let x: Vec<f64> = (0..n).map(|i| i as f64 / 4.0 - 3.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let fm = FeatureMatrix::new(
            (0..n).map(|i| format!("c{i:02}")).collect(),
            vec!["x".into()],
            ColMatrix::from_columns(&[x]),
            y,
            TargetTransform::Identity,
        )
        .unwrap();
        let groups = groups_for(&fm, 3);
        let cis = bootstrap_ci(
            &fm,
            &groups,
            &FitterSpec::<f64>::Ols,
            (0.0, 0.0),
            200,
            0.95,
            7,
        )
        .unwrap();
        assert_eq!(cis.len(), 1);
        let ci = &cis[0];
        assert!((ci.estimate - 2.0).abs() < 1e-8);
        assert!((ci.lower - ci.estimate).abs() < 1e-8);
        assert!((ci.upper - ci.estimate).abs() < 1e-8);
        assert!(!ci.spans_zero);
    }

    #[test]
    fn planted_zero_and_strong_coefficients_across_seeded_runs() {
        // a planted-zero coefficient's 95% interval should span zero in the
        // bulk of seeded simulations; a strong one never should
        let mut null_spans = 0;
        let mut strong_spans = 0;
        for run in 0..50u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5200 + run);
            let n = 48;
            let x1: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x2: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            // y depends strongly on x1, not at all on x2
            let y: Vec<f64> = (0..n)
                .map(|i| 5.0 * x1[i] + rng.random_range(-0.5..0.5))
                .collect();
            let fm = FeatureMatrix::new(
                (0..n).map(|i| format!("c{i:02}")).collect(),
                vec!["strong".into(), "null".into()],
                ColMatrix::from_columns(&[x1, x2]),
                y,
                TargetTransform::Identity,
            )
            .unwrap();
            let groups = groups_for(&fm, 4);
            let cis = bootstrap_ci(
                &fm,
                &groups,
                &FitterSpec::<f64>::Ols,
                (0.0, 0.0),
                200,
                0.95,
                run,
            )
            .unwrap();
            if cis[0].spans_zero {
                strong_spans += 1;
            }
            if cis[1].spans_zero {
                null_spans += 1;
            }
        }
        assert!(null_spans >= 45, "null coefficient spanned zero in only {null_spans}/50 runs");
        assert_eq!(strong_spans, 0, "strong coefficient spanned zero in {strong_spans} runs");
    }

    #[test]
    fn bootstrap_is_deterministic_for_fixed_seed() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(53);
        let n = 30;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-0.2..0.2)).collect();
        let fm = FeatureMatrix::new(
            (0..n).map(|i| format!("c{i:02}")).collect(),
            vec!["x".into()],
            ColMatrix::from_columns(&[x]),
            y,
            TargetTransform::Identity,
        )
        .unwrap();
        let groups = groups_for(&fm, 3);
        let a = bootstrap_ci(&fm, &groups, &FitterSpec::<f64>::Ols, (0.0, 0.0), 200, 0.9, 3)
            .unwrap();
        let b = bootstrap_ci(&fm, &groups, &FitterSpec::<f64>::Ols, (0.0, 0.0), 200, 0.9, 3)
            .unwrap();
        assert_eq!(a, b);
    }
}
