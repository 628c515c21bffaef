//! Grouped k-fold cross-validation, hyperparameter grid search, and final
//! model training.
//!
//! All cells sharing a `group_id` are assigned to the same fold, so holdout
//! error is measured across groups rather than within them. Standardization
//! statistics are recomputed on each training portion; holdout rows never
//! contribute to them.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::scalar::{self, Scalar};
use crate::solvers::{
    fit_elastic_net, fit_fused_lasso, fit_ols, predict_transformed, ENConfig, FitProvenance,
    FusedLassoConfig, LinearModel,
};

/// Mapping of cells to cross-validation folds that respects group boundaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_members(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(c, _)| c.as_str())
            .collect()
    }
}

/// Deterministic grouped k-fold: distinct groups are shuffled by a seeded
/// generator, then assigned greedily to the currently smallest fold (by cell
/// count). Exact balance is not guaranteed with unequal group sizes.
pub fn grouped_kfold(
    groups: &BTreeMap<String, String>,
    k: usize,
    seed: u64,
) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::CrossValidation(format!(
            "k must be at least 2, got {k}"
        )));
    }
    let mut by_group: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (cell, group) in groups {
        by_group.entry(group.as_str()).or_default().push(cell);
    }
    if by_group.len() < k {
        return Err(Error::CrossValidation(format!(
            "{} distinct groups cannot fill {k} folds",
            by_group.len()
        )));
    }
    let mut group_names: Vec<&str> = by_group.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    group_names.shuffle(&mut rng);

    let mut fold_sizes = vec![0usize; k];
    let mut assignment = BTreeMap::new();
    for g in group_names {
        let members = &by_group[g];
        let fold = fold_sizes
            .iter()
            .enumerate()
            .min_by_key(|(i, &s)| (s, *i))
            .map(|(i, _)| i)
            .unwrap();
        fold_sizes[fold] += members.len();
        for &cell in members {
            assignment.insert(cell.to_string(), fold);
        }
    }
    Ok(FoldAssignment { k, assignment })
}

/// Which fit family a grid point parameterizes. Grid points are `(λ, α)` for
/// the elastic net and `(λ1, λ2)` for the fused lasso; OLS takes no grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitterSpec<F> {
    Ols,
    ElasticNet { tolerance: F, max_sweeps: usize },
    FusedLasso { admm_rho: F, tolerance: F, max_iters: usize },
}

impl<F: Scalar> FitterSpec<F> {
    pub fn elastic_net() -> Self {
        let d = ENConfig::new(F::zero(), F::zero());
        FitterSpec::ElasticNet {
            tolerance: d.tolerance,
            max_sweeps: d.max_sweeps,
        }
    }

    pub fn fused_lasso() -> Self {
        let d = FusedLassoConfig::new(F::zero(), F::zero());
        FitterSpec::FusedLasso {
            admm_rho: d.admm_rho,
            tolerance: d.tolerance,
            max_iters: d.max_iters,
        }
    }

    pub fn param_names(&self) -> (&'static str, &'static str) {
        match self {
            FitterSpec::Ols => ("lambda", "alpha"),
            FitterSpec::ElasticNet { .. } => ("lambda", "alpha"),
            FitterSpec::FusedLasso { .. } => ("lambda1", "lambda2"),
        }
    }

    /// Fits at one grid point.
    pub fn fit(&self, fm: &FeatureMatrix<F>, point: (F, F)) -> Result<LinearModel<F>> {
        match self {
            FitterSpec::Ols => fit_ols(fm),
            FitterSpec::ElasticNet {
                tolerance,
                max_sweeps,
            } => fit_elastic_net(
                fm,
                &ENConfig {
                    lambda: point.0,
                    alpha: point.1,
                    tolerance: *tolerance,
                    max_sweeps: *max_sweeps,
                },
            ),
            FitterSpec::FusedLasso {
                admm_rho,
                tolerance,
                max_iters,
            } => fit_fused_lasso(
                fm,
                &FusedLassoConfig {
                    lambda1: point.0,
                    lambda2: point.1,
                    admm_rho: *admm_rho,
                    tolerance: *tolerance,
                    max_iters: *max_iters,
                },
            ),
        }
    }
}

/// Best-point selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Lowest mean holdout error; ties within 1e-12 break toward the larger
    /// first parameter, then the larger second.
    #[default]
    MinMeanError,
    /// Largest first parameter whose mean error is within one standard error
    /// of the minimum.
    OneStdError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvSettings {
    pub k: usize,
    pub seed: u64,
    pub rule: SelectionRule,
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings {
            k: 5,
            seed: 0,
            rule: SelectionRule::MinMeanError,
        }
    }
}

/// Grid-search result: per-point fold errors (RMSE on the transformed
/// target), summaries, and the selected point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVResult<F> {
    pub param_names: (String, String),
    pub grid: Vec<(F, F)>,
    pub mean_error: Vec<F>,
    pub std_error: Vec<F>,
    /// `per_fold[point][fold]`
    pub per_fold: Vec<Vec<F>>,
    pub best_index: usize,
    pub best_point: (F, F),
    pub k: usize,
    pub seed: u64,
}

fn rmse<F: Scalar>(errors: &[F]) -> F {
    let n = F::from_usize(errors.len()).unwrap();
    (errors.iter().fold(F::zero(), |a, &e| a + e * e) / n).sqrt()
}

/// Runs grouped k-fold cross-validation over a hyperparameter grid.
///
/// `fm` must be raw (unstandardized): each fold fit standardizes its own
/// training portion, and holdout predictions reuse those statistics.
pub fn grid_search_cv<F: Scalar>(
    fm: &FeatureMatrix<F>,
    groups: &BTreeMap<String, String>,
    grid: &[(F, F)],
    settings: &CvSettings,
    fitter: &FitterSpec<F>,
) -> Result<CVResult<F>> {
    if grid.is_empty() {
        return Err(Error::CrossValidation("empty hyperparameter grid".into()));
    }
    if fm.scaling().is_some() {
        return Err(Error::CrossValidation(
            "pass unstandardized features; per-fold statistics are computed internally".into(),
        ));
    }
    let mut cell_groups = BTreeMap::new();
    for cell in fm.rows() {
        match groups.get(cell) {
            Some(g) => {
                cell_groups.insert(cell.clone(), g.clone());
            }
            None => {
                return Err(Error::CrossValidation(format!(
                    "cell {cell} has no group assignment"
                )))
            }
        }
    }
    let folds = grouped_kfold(&cell_groups, settings.k, settings.seed)?;

    let mut train_idx: Vec<Vec<usize>> = vec![Vec::new(); settings.k];
    let mut hold_idx: Vec<Vec<usize>> = vec![Vec::new(); settings.k];
    for (i, cell) in fm.rows().iter().enumerate() {
        let f = folds.assignment[cell];
        for (fold, (tr, ho)) in train_idx.iter_mut().zip(hold_idx.iter_mut()).enumerate() {
            if fold == f {
                ho.push(i);
            } else {
                tr.push(i);
            }
        }
    }
    for (fold, ho) in hold_idx.iter().enumerate() {
        if ho.is_empty() || train_idx[fold].is_empty() {
            return Err(Error::CrossValidation(format!(
                "fold {fold} has an empty training or holdout portion"
            )));
        }
    }

    // evaluate every (point, fold) pair into its own slot; identical to
    // serial execution regardless of thread count
    let tasks: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|gi| (0..settings.k).map(move |f| (gi, f)))
        .collect();
    let outcomes: Vec<Result<F>> = tasks
        .par_iter()
        .map(|&(gi, fold)| {
            let train = fm.subset(&train_idx[fold]);
            let hold = fm.subset(&hold_idx[fold]);
            let model = fitter.fit(&train, grid[gi]).map_err(|e| {
                e.with_context(format!(
                    "grid point ({}, {}), fold {fold}",
                    grid[gi].0, grid[gi].1
                ))
            })?;
            let pred = predict_transformed(&model, &hold)?;
            let errs: Vec<F> = pred
                .iter()
                .zip(hold.target())
                .map(|(&p, &y)| p - y)
                .collect();
            Ok(rmse(&errs))
        })
        .collect();

    let mut per_fold = vec![vec![F::zero(); settings.k]; grid.len()];
    for (slot, outcome) in tasks.iter().zip(outcomes) {
        per_fold[slot.0][slot.1] = outcome?;
    }

    let mean_error: Vec<F> = per_fold.iter().map(|fs| scalar::mean(fs)).collect();
    let std_error: Vec<F> = per_fold.iter().map(|fs| scalar::sample_std(fs)).collect();

    let best_index = select_best(grid, &mean_error, &std_error, settings)?;
    Ok(CVResult {
        param_names: {
            let (a, b) = fitter.param_names();
            (a.to_string(), b.to_string())
        },
        grid: grid.to_vec(),
        mean_error,
        std_error,
        per_fold,
        best_index,
        best_point: grid[best_index],
        k: settings.k,
        seed: settings.seed,
    })
}

fn select_best<F: Scalar>(
    grid: &[(F, F)],
    mean_error: &[F],
    std_error: &[F],
    settings: &CvSettings,
) -> Result<usize> {
    let min_err = mean_error
        .iter()
        .copied()
        .fold(F::infinity(), |a, b| a.min(b));
    if !min_err.is_finite() {
        return Err(Error::CrossValidation(
            "cross-validation errors are not finite".into(),
        ));
    }
    let threshold = match settings.rule {
        SelectionRule::MinMeanError => min_err + F::cast(1e-12),
        SelectionRule::OneStdError => {
            let arg = mean_error.iter().position(|&m| m == min_err).unwrap();
            let k = F::from_usize(settings.k).unwrap();
            min_err + std_error[arg] / k.sqrt()
        }
    };
    let mut best: Option<usize> = None;
    for (i, &(l, a)) in grid.iter().enumerate() {
        if mean_error[i] <= threshold {
            best = match best {
                None => Some(i),
                Some(b) => {
                    let (bl, ba) = grid[b];
                    if l > bl || (l == bl && a > ba) {
                        Some(i)
                    } else {
                        Some(b)
                    }
                }
            };
        }
    }
    Ok(best.unwrap())
}

/// Trains the final model on all rows of `fm` at the selected point and
/// stores the cross-validation provenance on the model.
pub fn fit_final<F: Scalar>(
    fm: &FeatureMatrix<F>,
    cv: &CVResult<F>,
    fitter: &FitterSpec<F>,
) -> Result<LinearModel<F>> {
    let mut model = fitter.fit(fm, cv.best_point)?;
    model.provenance = Some(FitProvenance {
        cv_seed: cv.seed,
        k: cv.k,
        param_names: cv.param_names.clone(),
        grid: cv.grid.clone(),
        per_fold_errors: cv.per_fold.clone(),
        mean_errors: cv.mean_error.clone(),
        best_point: cv.best_point,
    });
    Ok(model)
}

impl<F: Scalar> CVResult<F> {
    /// Report rows `param1,param2,fold,rmse` followed by a summary block.
    pub fn to_report(&self) -> String {
        let mut text = format!("{},{},fold,rmse\n", self.param_names.0, self.param_names.1);
        for (gi, point) in self.grid.iter().enumerate() {
            for (fold, err) in self.per_fold[gi].iter().enumerate() {
                text.push_str(&format!("{},{},{fold},{err}\n", point.0, point.1));
            }
        }
        text.push_str(&format!(
            "# best {}={} {}={}\n# seed={} k={}\n",
            self.param_names.0,
            self.best_point.0,
            self.param_names.1,
            self.best_point.1,
            self.seed,
            self.k
        ));
        text
    }

    pub fn write_report(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::dataset::write_text(path.as_ref(), &self.to_report())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::TargetTransform;
    use crate::linalg::ColMatrix;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn groups_of(spec: &[(&str, &str)]) -> BTreeMap<String, String> {
        spec.iter()
            .map(|(c, g)| (c.to_string(), g.to_string()))
            .collect()
    }

    #[test]
    fn six_singleton_groups_balance_into_three_folds() {
        let groups = groups_of(&[
            ("c1", "g1"),
            ("c2", "g2"),
            ("c3", "g3"),
            ("c4", "g4"),
            ("c5", "g5"),
            ("c6", "g6"),
        ]);
        let folds = grouped_kfold(&groups, 3, 9).unwrap();
        for f in 0..3 {
            assert_eq!(folds.fold_members(f).len(), 2);
        }
    }

    #[test]
    fn large_group_stays_together() {
        let mut spec = vec![
            ("a1", "big"),
            ("a2", "big"),
            ("a3", "big"),
            ("a4", "big"),
            ("a5", "big"),
        ];
        for i in 0..9 {
            spec.push((Box::leak(format!("s{i}").into_boxed_str()), Box::leak(format!("g{i}").into_boxed_str())));
        }
        let groups = groups_of(&spec);
        let folds = grouped_kfold(&groups, 4, 3).unwrap();
        let f = folds.assignment["a1"];
        for c in ["a2", "a3", "a4", "a5"] {
            assert_eq!(folds.assignment[c], f);
        }
    }

    #[test]
    fn too_few_groups_is_an_error() {
        let groups = groups_of(&[("c1", "g1"), ("c2", "g2"), ("c3", "g1")]);
        assert!(grouped_kfold(&groups, 3, 0).is_err());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let groups = groups_of(&[
            ("c1", "g1"),
            ("c2", "g2"),
            ("c3", "g3"),
            ("c4", "g4"),
            ("c5", "g5"),
        ]);
        let a = grouped_kfold(&groups, 2, 7).unwrap();
        let b = grouped_kfold(&groups, 2, 7).unwrap();
        assert_eq!(a, b);
        let c = grouped_kfold(&groups, 2, 8).unwrap();
        // different seed is allowed to differ (not asserted), but must still
        // be a valid assignment
        assert_eq!(c.assignment.len(), 5);
    }

    proptest! {
        #[test]
        #[allow(clippy::needless_range_loop)]
        fn folds_partition_cells_and_respect_groups(
            n_groups in 2usize..12,
            cells_per in proptest::collection::vec(1usize..6, 2..12),
            seed in 0u64..500,
        ) {
            let n_groups = n_groups.min(cells_per.len());
            let mut groups = BTreeMap::new();
            for g in 0..n_groups {
                for c in 0..cells_per[g] {
                    groups.insert(format!("cell_{g}_{c}"), format!("group_{g}"));
                }
            }
            let k = 2 + (seed as usize % (n_groups - 1).max(1));
            let k = k.min(n_groups);
            let folds = grouped_kfold(&groups, k, seed).unwrap();
            // every cell exactly once
            prop_assert_eq!(folds.assignment.len(), groups.len());
            // group integrity
            let mut group_fold: BTreeMap<&str, usize> = BTreeMap::new();
            for (cell, &fold) in &folds.assignment {
                prop_assert!(fold < k);
                let g = groups[cell].as_str();
                if let Some(&f) = group_fold.get(g) {
                    prop_assert_eq!(f, fold);
                } else {
                    group_fold.insert(g, fold);
                }
            }
            // every fold non-empty
            for f in 0..k {
                prop_assert!(folds.assignment.values().any(|&x| x == f));
            }
        }
    }

    fn synthetic_fm(
        rng: &mut ChaCha8Rng,
        n_groups: usize,
        per_group: usize,
        noise: f64,
    ) -> (FeatureMatrix<f64>, BTreeMap<String, String>) {
        let n = n_groups * per_group;
        let mut col = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        let mut groups = BTreeMap::new();
        for g in 0..n_groups {
            for c in 0..per_group {
                let id = format!("cell_{g}_{c}");
                let x: f64 = rng.random_range(-1.0..1.0);
                col.push(x);
                y.push(2.0 * x + 1.0 + noise * rng.random_range(-1.0..1.0));
                groups.insert(id.clone(), format!("group_{g}"));
                rows.push(id);
            }
        }
        let fm = FeatureMatrix::new(
            rows,
            vec!["x".into()],
            ColMatrix::from_columns(&[col]),
            y,
            TargetTransform::Identity,
        )
        .unwrap();
        (fm, groups)
    }

    #[test]
    fn single_point_grid_selects_that_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let (fm, groups) = synthetic_fm(&mut rng, 6, 3, 0.1);
        let cv = grid_search_cv(
            &fm,
            &groups,
            &[(0.05, 0.5)],
            &CvSettings { k: 3, seed: 1, rule: SelectionRule::MinMeanError },
            &FitterSpec::elastic_net(),
        )
        .unwrap();
        assert_eq!(cv.best_point, (0.05, 0.5));
        assert_eq!(cv.per_fold[0].len(), 3);
    }

    #[test]
    fn lambda_max_point_behaves_like_mean_predictor() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (fm, groups) = synthetic_fm(&mut rng, 5, 4, 0.05);
        let settings = CvSettings { k: 5, seed: 2, rule: SelectionRule::MinMeanError };
        let lmax = crate::solvers::lambda_max(&fm, 1.0).unwrap();
        let big = lmax * 10.0;
        let cv = grid_search_cv(
            &fm,
            &groups,
            &[(big, 1.0)],
            &settings,
            &FitterSpec::elastic_net(),
        )
        .unwrap();
        // oracle: grouped-CV error of the constant mean predictor on the
        // same folds
        let folds = grouped_kfold(&groups, settings.k, settings.seed).unwrap();
        for fold in 0..settings.k {
            let (mut tr_sum, mut tr_n) = (0.0, 0usize);
            let mut hold = Vec::new();
            for (i, cell) in fm.rows().iter().enumerate() {
                if folds.assignment[cell] == fold {
                    hold.push(fm.target()[i]);
                } else {
                    tr_sum += fm.target()[i];
                    tr_n += 1;
                }
            }
            let mean = tr_sum / tr_n as f64;
            let rmse_oracle =
                (hold.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / hold.len() as f64)
                    .sqrt();
            assert!(
                (cv.per_fold[0][fold] - rmse_oracle).abs() < 1e-10,
                "fold {fold}: {} vs {rmse_oracle}",
                cv.per_fold[0][fold]
            );
        }
    }

    #[test]
    fn corrupting_holdout_targets_leaves_fold_models_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (fm, groups) = synthetic_fm(&mut rng, 6, 3, 0.1);
        let settings = CvSettings { k: 3, seed: 3, rule: SelectionRule::MinMeanError };
        let folds = grouped_kfold(&groups, settings.k, settings.seed).unwrap();
        let fitter = FitterSpec::elastic_net();
        for fold in 0..settings.k {
            let train: Vec<usize> = (0..fm.n_rows())
                .filter(|&i| folds.assignment[&fm.rows()[i]] != fold)
                .collect();
            let clean = fitter.fit(&fm.subset(&train), (0.1, 0.5)).unwrap();
            // corrupt every holdout target, rebuild, refit
            let mut target = fm.target().to_vec();
            for (i, cell) in fm.rows().iter().enumerate() {
                if folds.assignment[cell] == fold {
                    target[i] = 1e6 + i as f64;
                }
            }
            let corrupted = FeatureMatrix::new(
                fm.rows().to_vec(),
                fm.columns().to_vec(),
                fm.values().clone(),
                target,
                fm.target_transform(),
            )
            .unwrap();
            let dirty = fitter.fit(&corrupted.subset(&train), (0.1, 0.5)).unwrap();
            assert_eq!(clean.coefficients, dirty.coefficients);
            assert_eq!(clean.intercept.to_bits(), dirty.intercept.to_bits());
        }
    }

    #[test]
    fn tie_break_prefers_larger_lambda_then_alpha() {
        let grid = [(0.1, 0.5), (0.2, 0.5), (0.2, 0.9), (0.05, 1.0)];
        let mean = vec![0.5, 0.5, 0.5, 0.5 + 1e-13];
        let std = vec![0.0; 4];
        let settings = CvSettings { k: 2, seed: 0, rule: SelectionRule::MinMeanError };
        let best = select_best(&grid, &mean, &std, &settings).unwrap();
        assert_eq!(grid[best], (0.2, 0.9));
    }

    #[test]
    fn one_std_error_rule_prefers_sparser_models_within_one_se() {
        // point 0 is the raw minimum; point 2 is within one standard error
        // and has the larger λ, point 3 is outside
        let grid = [(0.1, 1.0), (0.5, 1.0), (1.0, 1.0), (5.0, 1.0)];
        let mean = vec![0.50, 0.52, 0.53, 0.60];
        let std = vec![0.08, 0.08, 0.08, 0.08];
        let settings = CvSettings { k: 4, seed: 0, rule: SelectionRule::OneStdError };
        // threshold = 0.50 + 0.08/2 = 0.54
        let best = select_best(&grid, &mean, &std, &settings).unwrap();
        assert_eq!(grid[best], (1.0, 1.0));
        let settings = CvSettings { k: 4, seed: 0, rule: SelectionRule::MinMeanError };
        let best = select_best(&grid, &mean, &std, &settings).unwrap();
        assert_eq!(grid[best], (0.1, 1.0));
    }

    #[test]
    fn fit_final_at_zero_penalty_equals_ols_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let (fm, groups) = synthetic_fm(&mut rng, 5, 4, 0.2);
        let settings = CvSettings { k: 3, seed: 5, rule: SelectionRule::MinMeanError };
        let fitter = FitterSpec::elastic_net();
        let cv = grid_search_cv(&fm, &groups, &[(0.0, 1.0)], &settings, &fitter).unwrap();
        let final_model = fit_final(&fm, &cv, &fitter).unwrap();
        let ols = crate::solvers::fit_ols(&crate::features::standardize(&fm).unwrap()).unwrap();
        for (a, b) in final_model.coefficients.iter().zip(&ols.coefficients) {
            assert!((a - b).abs() < 1e-6);
        }
        // determinism: identical model documents
        let cv2 = grid_search_cv(&fm, &groups, &[(0.0, 1.0)], &settings, &fitter).unwrap();
        let final2 = fit_final(&fm, &cv2, &fitter).unwrap();
        let doc1 = crate::solvers::model_to_string(&final_model).unwrap();
        let doc2 = crate::solvers::model_to_string(&final2).unwrap();
        assert_eq!(doc1, doc2);
        // stationarity certificate
        let fm_std = crate::features::standardize(&fm).unwrap();
        let kkt = crate::solvers::kkt_residual(&final_model, &fm_std).unwrap();
        assert!(kkt < 1e-7, "kkt {kkt}");
    }
}
