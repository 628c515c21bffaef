//! Library-level end-to-end tests: synthetic data through features, grouped
//! cross-validation, fitting, and diagnostics.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use cyclelife::features::{
    assemble_feature_matrix, FeatureMatrix, FeatureSpec, Reduction, TargetTransform, Transform,
    VoltageGrid,
};
use cyclelife::linalg::ColMatrix;
use cyclelife::model_selection::{grid_search_cv, fit_final, CvSettings, FitterSpec, SelectionRule};
use cyclelife::solvers::{predict, predict_transformed};
use cyclelife::synth::{generate_dataset, SynthSpec};

fn pipeline_spec(seed: u64, n_cells: usize, groups: usize, noise: f64) -> SynthSpec {
    SynthSpec {
        n_cells,
        seed,
        groups,
        noise_sigma: noise,
        n_grid_points: 200,
        ..SynthSpec::default()
    }
}

/// Fits the standard single-feature pipeline and returns the raw-scale slope
/// of log10(cycle life) against log10(Var ΔQ) plus the best-point CV error.
fn fit_pipeline(spec: &SynthSpec, cv_seed: u64) -> (f64, f64) {
    let (dataset, _) = generate_dataset::<f64>(spec).unwrap();
    let labels = dataset.labels(spec.threshold_fraction).unwrap();
    let grid = VoltageGrid::new(spec.v_high, spec.v_low, spec.n_grid_points).unwrap();
    let specs = vec![FeatureSpec::Scalar {
        reduction: Reduction::Variance,
        transform: Transform::Log10Abs,
        cycle_a: spec.cycle_a,
        cycle_b: spec.cycle_b,
    }];
    let fm =
        assemble_feature_matrix(&dataset, &labels, &specs, &grid, TargetTransform::Log10).unwrap();
    let groups = dataset.group_map();
    let grid_points = [(1e-9, 1.0), (1e-6, 1.0), (1e-4, 1.0), (1e-4, 0.5)];
    let settings = CvSettings {
        k: 5,
        seed: cv_seed,
        rule: SelectionRule::MinMeanError,
    };
    let fitter = FitterSpec::elastic_net();
    let cv = grid_search_cv(&fm, &groups, &grid_points, &settings, &fitter).unwrap();
    let model = fit_final(&fm, &cv, &fitter).unwrap();
    (
        model.raw_scale_coefficients()[0],
        cv.mean_error[cv.best_index],
    )
}

#[test]
fn noiseless_pipeline_recovers_planted_slope_to_1e3() {
    let spec = pipeline_spec(42, 40, 8, 0.0);
    let (slope, cv_err) = fit_pipeline(&spec, 1);
    assert!(
        (slope - spec.planted_slope).abs() < 1e-3,
        "slope {slope} vs planted {}",
        spec.planted_slope
    );
    assert!(cv_err < 1e-3, "noiseless holdout error {cv_err}");
}

#[test]
fn noisy_pipeline_recovers_slope_and_predicts() {
    let spec = pipeline_spec(7, 124, 8, 0.05);
    let (slope, cv_err) = fit_pipeline(&spec, 3);
    assert!(
        (slope - spec.planted_slope).abs() < 0.1 * spec.planted_slope.abs(),
        "slope {slope} vs planted {}",
        spec.planted_slope
    );
    assert!(cv_err <= 1.2 * spec.noise_sigma, "holdout RMSE {cv_err}");
}

#[test]
fn raw_delta_q_mode_yields_the_wide_matrix_shape() {
    // 124 cells on the 1000-point grid → a 124×1000 predictor matrix
    let spec = SynthSpec {
        n_cells: 124,
        groups: 8,
        seed: 1,
        noise_sigma: 0.05,
        n_grid_points: 1000,
        ..SynthSpec::default()
    };
    let (dataset, _) = generate_dataset::<f64>(&spec).unwrap();
    let labels = dataset.labels(spec.threshold_fraction).unwrap();
    let grid = VoltageGrid::new(spec.v_high, spec.v_low, spec.n_grid_points).unwrap();
    let fm = assemble_feature_matrix(
        &dataset,
        &labels,
        &[FeatureSpec::RawDeltaQ {
            cycle_a: 100,
            cycle_b: 10,
        }],
        &grid,
        TargetTransform::Log10,
    )
    .unwrap();
    assert_eq!(fm.n_rows(), 124);
    assert_eq!(fm.n_cols(), 1000);
    assert!(fm.values().col(0).iter().all(|v| v.is_finite()));
}

#[test]
fn predictions_on_cycles_scale_invert_the_target_transform() {
    let spec = pipeline_spec(13, 30, 6, 0.02);
    let (dataset, _) = generate_dataset::<f64>(&spec).unwrap();
    let labels = dataset.labels(spec.threshold_fraction).unwrap();
    let grid = VoltageGrid::new(spec.v_high, spec.v_low, spec.n_grid_points).unwrap();
    let specs = vec![FeatureSpec::Scalar {
        reduction: Reduction::Variance,
        transform: Transform::Log10Abs,
        cycle_a: 100,
        cycle_b: 10,
    }];
    let fm =
        assemble_feature_matrix(&dataset, &labels, &specs, &grid, TargetTransform::Log10).unwrap();
    let fitter = FitterSpec::elastic_net();
    let model = fitter.fit(&fm, (1e-6, 1.0)).unwrap();
    let latent = predict_transformed(&model, &fm).unwrap();
    let cycles = predict(&model, &fm).unwrap();
    for (l, c) in latent.iter().zip(&cycles) {
        assert!((10f64.powf(*l) - c).abs() < 1e-9 * c.abs().max(1.0));
    }
    // cycles-scale predictions should track the labels well at low noise
    for (i, cell) in fm.rows().iter().enumerate() {
        let label = labels.iter().find(|l| &l.cell_id == cell).unwrap();
        let rel = (cycles[i] - label.cycle_life).abs() / label.cycle_life;
        assert!(rel < 0.5, "cell {cell}: predicted {} vs {}", cycles[i], label.cycle_life);
    }
}

/// Generative model for the shrinkage-benefit study: p weak coefficients
/// under heavy noise, so an interior ridge weight minimizes expected holdout
/// error.
struct ShrinkageWorld {
    n_groups: usize,
    per_group: usize,
    p: usize,
    beta: f64,
    noise: f64,
}

impl ShrinkageWorld {
    fn draw(&self, rng: &mut ChaCha8Rng) -> (FeatureMatrix<f64>, BTreeMap<String, String>) {
        let n = self.n_groups * self.per_group;
        let gauss = Normal::new(0.0, 1.0).unwrap();
        let cols: Vec<Vec<f64>> = (0..self.p)
            .map(|_| (0..n).map(|_| gauss.sample(rng)).collect())
            .collect();
        let mut rows = Vec::with_capacity(n);
        let mut groups = BTreeMap::new();
        let mut y = Vec::with_capacity(n);
        for g in 0..self.n_groups {
            for c in 0..self.per_group {
                let i = g * self.per_group + c;
                let id = format!("cell_{g:02}_{c}");
                let mut v = 0.0;
                for col in &cols {
                    v += self.beta * col[i];
                }
                y.push(v + self.noise * gauss.sample(rng));
                groups.insert(id.clone(), format!("group_{g:02}"));
                rows.push(id);
            }
        }
        let fm = FeatureMatrix::new(
            rows,
            (0..self.p).map(|j| format!("x{j}")).collect(),
            ColMatrix::from_columns(&cols),
            y,
            TargetTransform::Identity,
        )
        .unwrap();
        (fm, groups)
    }
}

/// The expected-holdout-error curve over the λ grid, estimated by direct
/// simulation: fresh train/test draws from the same world, fit at each λ,
/// average the test RMSE.
fn oracle_error_curve(world: &ShrinkageWorld, grid: &[(f64, f64)], reps: usize) -> Vec<f64> {
    let fitter = FitterSpec::elastic_net();
    let mut errs = vec![0.0; grid.len()];
    for rep in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(900_000 + rep as u64);
        let (train, _) = world.draw(&mut rng);
        let (test, _) = world.draw(&mut rng);
        for (gi, &point) in grid.iter().enumerate() {
            let model = fitter.fit(&train, point).unwrap();
            let pred = predict_transformed(&model, &test).unwrap();
            let mse: f64 = pred
                .iter()
                .zip(test.target())
                .map(|(p, y)| (p - y) * (p - y))
                .sum::<f64>()
                / test.target().len() as f64;
            errs[gi] += mse.sqrt();
        }
    }
    for e in &mut errs {
        *e /= reps as f64;
    }
    errs
}

#[test]
fn cv_selects_near_the_simulated_optimum_lambda() {
    let world = ShrinkageWorld {
        n_groups: 20,
        per_group: 5,
        p: 10,
        beta: 0.5,
        noise: 2.0,
    };
    // log-spaced ridge-leaning grid; α fixed so the study is 1-D in λ
    let lambdas = [0.2f64, 2.0, 20.0, 200.0, 2e3, 2e4, 2e5];
    let grid: Vec<(f64, f64)> = lambdas.iter().map(|&l| (l, 0.1)).collect();

    let oracle = oracle_error_curve(&world, &grid, 60);
    let oracle_best = oracle
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    assert!(
        oracle_best > 0 && oracle_best < grid.len() - 1,
        "study construction: the simulated optimum must be interior, got index {oracle_best} of {:?}",
        oracle
    );

    let fitter = FitterSpec::elastic_net();
    let mut hits = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (fm, groups) = world.draw(&mut rng);
        let settings = CvSettings {
            k: 4,
            seed,
            rule: SelectionRule::MinMeanError,
        };
        let cv = grid_search_cv(&fm, &groups, &grid, &settings, &fitter).unwrap();
        if cv.best_index.abs_diff(oracle_best) <= 1 {
            hits += 1;
        }
    }
    assert!(
        hits >= 18,
        "CV landed within one grid step of the simulated optimum in only {hits}/20 seeds"
    );
}
