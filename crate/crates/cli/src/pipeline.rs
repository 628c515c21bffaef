//! Shared pipeline machinery behind the subcommands: dataset/label/split
//! resolution, staged artifact production, and cleanup of partial outputs on
//! failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cyclelife::dataset::{load_dataset, CycleLifeLabel, Dataset};
use cyclelife::diagnostics::{
    bootstrap_ci, compute_metrics, residual_diagnostics, CoefficientCI, DiagnosticsExport,
    MetricScale, MetricsReport,
};
use cyclelife::features::{
    assemble_feature_matrix, delta_q, write_delta_q_matrix, write_feature_matrix, FeatureMatrix,
    FeatureSpec, VoltageGrid,
};
use cyclelife::model_selection::{fit_final, grid_search_cv, CVResult};
use cyclelife::solvers::{load_model, predict, save_model, FitConfig, LinearModel};

use crate::config::RunConfig;
use crate::{CliError, GlobalArgs};

pub struct SplitDef {
    pub name: String,
    /// Row indices into the assembled feature matrix.
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredRow {
    pub cell_id: String,
    pub split: String,
    pub true_cycles: f64,
    pub predicted_cycles: f64,
}

struct Artifacts {
    dir: PathBuf,
    created: Vec<PathBuf>,
}

impl Artifacts {
    fn file(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        if !self.created.contains(&p) {
            self.created.push(p.clone());
        }
        p
    }

    fn cleanup(&self) {
        for p in &self.created {
            let _ = std::fs::remove_file(p);
        }
    }
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub out_dir: PathBuf,
    pub dataset: Dataset<f64>,
    pub labels: BTreeMap<String, CycleLifeLabel<f64>>,
    pub groups: BTreeMap<String, String>,
    pub grid: VoltageGrid<f64>,
    pub fm: FeatureMatrix<f64>,
    pub splits: Vec<SplitDef>,
    seed_override: Option<u64>,
    artifacts: Artifacts,
    notes: Vec<String>,
}

impl Pipeline {
    pub fn load(args: &GlobalArgs) -> Result<Self, CliError> {
        let cfg = RunConfig::load(&args.config)?;
        let out_dir = args
            .out
            .clone()
            .or_else(|| cfg.output.dir.clone())
            .ok_or_else(|| {
                CliError::Config("no output directory (set [output].dir or pass --out)".into())
            })?;
        if !cfg.dataset.manifest.exists() {
            return Err(CliError::Config(format!(
                "dataset.manifest: {} does not exist",
                cfg.dataset.manifest.display()
            )));
        }
        std::fs::create_dir_all(&out_dir).map_err(|e| {
            CliError::Data(format!("cannot create output dir {}: {e}", out_dir.display()))
        })?;

        let dataset: Dataset<f64> = load_dataset(&cfg.dataset.manifest)?;
        let mut labels = BTreeMap::new();
        for cell in dataset.cells() {
            let label =
                cyclelife::dataset::compute_cycle_life(cell, cfg.dataset.threshold_fraction)?;
            labels.insert(cell.cell_id.clone(), label);
        }
        let groups = dataset.group_map();
        let grid = cfg.grid()?;

        let mut notes = Vec::new();
        // resolve splits to non-censored labeled cells
        let declared: Vec<(String, Vec<String>)> = match &cfg.splits {
            Some(s) => vec![
                ("train".to_string(), s.train.clone()),
                ("primary_test".to_string(), s.primary_test.clone()),
                ("secondary_test".to_string(), s.secondary_test.clone()),
            ],
            None => vec![(
                "train".to_string(),
                dataset.cells().iter().map(|c| c.cell_id.clone()).collect(),
            )],
        };
        let mut member_cells: Vec<(String, String)> = Vec::new(); // (cell, split)
        for (split, cells) in &declared {
            for cell in cells {
                let label = labels.get(cell).ok_or_else(|| {
                    CliError::Config(format!("splits: cell {cell} not in the dataset"))
                })?;
                if label.censored {
                    notes.push(format!(
                        "note: cell {cell} ({split}) is censored and excluded"
                    ));
                } else {
                    member_cells.push((cell.clone(), split.clone()));
                }
            }
        }
        if member_cells.is_empty() {
            return Err(CliError::Data(
                "no non-censored labeled cells in the configured splits".into(),
            ));
        }

        let kept: Vec<CycleLifeLabel<f64>> = member_cells
            .iter()
            .map(|(cell, _)| labels[cell].clone())
            .collect();
        let fm = assemble_feature_matrix(
            &dataset,
            &kept,
            &cfg.features.specs,
            &grid,
            cfg.features.target_transform,
        )?;

        let split_of: BTreeMap<&str, &str> = member_cells
            .iter()
            .map(|(c, s)| (c.as_str(), s.as_str()))
            .collect();
        let mut splits: Vec<SplitDef> = declared
            .iter()
            .map(|(name, _)| SplitDef {
                name: name.clone(),
                indices: Vec::new(),
            })
            .collect();
        for (i, cell) in fm.rows().iter().enumerate() {
            let split = split_of[cell.as_str()];
            splits
                .iter_mut()
                .find(|s| s.name == split)
                .unwrap()
                .indices
                .push(i);
        }
        splits.retain(|s| !s.indices.is_empty());

        Ok(Pipeline {
            cfg,
            dataset,
            labels,
            groups,
            grid,
            fm,
            splits,
            seed_override: args.seed,
            artifacts: Artifacts {
                dir: out_dir.clone(),
                created: Vec::new(),
            },
            notes,
            out_dir,
        })
    }

    fn train_split(&self) -> Result<&SplitDef, CliError> {
        self.splits
            .iter()
            .find(|s| s.name == "train")
            .ok_or_else(|| CliError::Data("train split is empty".into()))
    }

    pub fn stage_featurize(&mut self) -> Result<(), CliError> {
        let path = self.artifacts.file("feature_matrix.csv");
        write_feature_matrix(&self.fm, &path)?;
        if self.cfg.features.export_delta_q {
            let mut pairs: Vec<(u32, u32)> = self
                .cfg
                .features
                .specs
                .iter()
                .map(|s| match s {
                    FeatureSpec::Scalar {
                        cycle_a, cycle_b, ..
                    }
                    | FeatureSpec::RawDeltaQ { cycle_a, cycle_b } => (*cycle_a, *cycle_b),
                })
                .collect();
            pairs.sort();
            pairs.dedup();
            for (a, b) in pairs {
                let mut dqs = Vec::with_capacity(self.fm.n_rows());
                for cell_id in self.fm.rows() {
                    let cell = self.dataset.cell(cell_id).unwrap();
                    dqs.push(delta_q(cell, a, b, &self.grid)?);
                }
                let path = self.artifacts.file(&format!("delta_q_{a}_{b}.csv"));
                write_delta_q_matrix(&dqs, &path)?;
            }
        }
        Ok(())
    }

    pub fn stage_cv(&mut self) -> Result<CVResult<f64>, CliError> {
        let train = self.train_split()?;
        let train_fm = self.fm.subset(&train.indices);
        let grid_points = self.cfg.grid_points()?;
        let fitter = self.cfg.fitter()?;
        let settings = self.cfg.cv_settings(self.seed_override);
        let cv = grid_search_cv(&train_fm, &self.groups, &grid_points, &settings, &fitter)?;
        let path = self.artifacts.file("cv_report.csv");
        cv.write_report(&path)?;
        Ok(cv)
    }

    pub fn stage_train(&mut self, cv: &CVResult<f64>) -> Result<LinearModel<f64>, CliError> {
        let train = self.train_split()?;
        let train_fm = self.fm.subset(&train.indices);
        let fitter = self.cfg.fitter()?;
        let model = fit_final(&train_fm, cv, &fitter)?;
        let path = self.artifacts.file("model.json");
        save_model(&model, &path)?;
        Ok(model)
    }

    pub fn load_model(&self) -> Result<LinearModel<f64>, CliError> {
        let path = self.out_dir.join("model.json");
        if !path.exists() {
            return Err(CliError::Data(format!(
                "{} not found; run `train` first",
                path.display()
            )));
        }
        Ok(load_model(&path)?)
    }

    pub fn stage_predict(&mut self, model: &LinearModel<f64>) -> Result<Vec<PredRow>, CliError> {
        let mut rows = Vec::new();
        for split in &self.splits {
            let sub = self.fm.subset(&split.indices);
            let cycles = predict(model, &sub)?;
            for (cell, pred) in sub.rows().iter().zip(cycles) {
                rows.push(PredRow {
                    cell_id: cell.clone(),
                    split: split.name.clone(),
                    true_cycles: self.labels[cell].cycle_life,
                    predicted_cycles: pred,
                });
            }
        }
        let mut text = String::from("cell_id,split,true_cycle_life,predicted_cycle_life\n");
        for r in &rows {
            text.push_str(&format!(
                "{},{},{},{}\n",
                r.cell_id, r.split, r.true_cycles, r.predicted_cycles
            ));
        }
        let path = self.artifacts.file("predictions.csv");
        write_text(&path, &text)?;

        // parity data per split: observed vs predicted cycles
        for split in &self.splits {
            let mut text = String::from("cell_id,observed_cycles,predicted_cycles\n");
            for r in rows.iter().filter(|r| r.split == split.name) {
                text.push_str(&format!(
                    "{},{},{}\n",
                    r.cell_id, r.true_cycles, r.predicted_cycles
                ));
            }
            let path = self.artifacts.file(&format!("parity_{}.csv", split.name));
            write_text(&path, &text)?;
        }
        Ok(rows)
    }

    pub fn read_predictions(&self) -> Result<Vec<PredRow>, CliError> {
        let path = self.out_dir.join("predictions.csv");
        let text = std::fs::read_to_string(&path).map_err(|e| {
            CliError::Data(format!("cannot read {}; run `predict` first: {e}", path.display()))
        })?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(CliError::Data(format!(
                    "{}:{}: expected 4 fields",
                    path.display(),
                    i + 1
                )));
            }
            rows.push(PredRow {
                cell_id: fields[0].to_string(),
                split: fields[1].to_string(),
                true_cycles: parse_f64(fields[2], &path, i + 1)?,
                predicted_cycles: parse_f64(fields[3], &path, i + 1)?,
            });
        }
        Ok(rows)
    }

    /// Metrics on both scales per split, residual normality on the train
    /// split, and (when a model is available) bootstrap coefficient
    /// intervals plus the fused coefficient profile.
    pub fn stage_evaluate(
        &mut self,
        preds: &[PredRow],
        model: Option<&LinearModel<f64>>,
    ) -> Result<(), CliError> {
        let transform = self.cfg.features.target_transform;
        let loaded;
        let model = match model {
            Some(m) => Some(m),
            None => {
                // evaluate after train: pick up the stored model when present
                if self.out_dir.join("model.json").exists() {
                    loaded = self.load_model()?;
                    Some(&loaded)
                } else {
                    None
                }
            }
        };

        let mut metrics: Vec<(String, MetricsReport<f64>)> = Vec::new();
        let split_names: Vec<String> = self
            .splits
            .iter()
            .map(|s| s.name.clone())
            .filter(|n| preds.iter().any(|r| &r.split == n))
            .collect();
        for split in &split_names {
            let rows: Vec<&PredRow> = preds.iter().filter(|r| &r.split == split).collect();
            let y_cycles: Vec<f64> = rows.iter().map(|r| r.true_cycles).collect();
            let p_cycles: Vec<f64> = rows.iter().map(|r| r.predicted_cycles).collect();
            let y_t: Vec<f64> = y_cycles
                .iter()
                .map(|&v| transform.forward(v))
                .collect::<Result<_, _>>()?;
            let p_t: Vec<f64> = p_cycles
                .iter()
                .map(|&v| transform.forward(v))
                .collect::<Result<_, _>>()?;
            metrics.push((
                split.clone(),
                compute_metrics(&y_t, &p_t, MetricScale::Transformed)?,
            ));
            metrics.push((
                split.clone(),
                compute_metrics(&y_cycles, &p_cycles, MetricScale::Cycles)?,
            ));
        }
        let mut text = String::from("split,scale,n,mse,rmse,r2,aape_percent\n");
        for (split, m) in &metrics {
            text.push_str(&format!(
                "{split},{},{},{},{},{},{}\n",
                m.scale, m.n, m.mse, m.rmse, m.r2, m.aape_percent
            ));
        }
        let path = self.artifacts.file("metrics.csv");
        write_text(&path, &text)?;

        // residuals on the transformed scale, train split
        let residuals: Vec<(String, f64)> = preds
            .iter()
            .filter(|r| r.split == "train")
            .map(|r| {
                Ok((
                    r.cell_id.clone(),
                    transform.forward(r.true_cycles)? - transform.forward(r.predicted_cycles)?,
                ))
            })
            .collect::<Result<_, cyclelife::Error>>()?;
        let res_values: Vec<f64> = residuals.iter().map(|(_, r)| r).copied().collect();
        let residual_report = match residual_diagnostics(
            &res_values,
            self.cfg.diagnostics.chi_square_bins,
        ) {
            Ok(rep) => Some(rep),
            Err(e) => {
                self.notes.push(format!("note: residual normality skipped: {e}"));
                None
            }
        };

        let mut cis: Vec<CoefficientCI<f64>> = Vec::new();
        if let Some(model) = model {
            if self.cfg.diagnostics.bootstrap_resamples > 0 {
                let train = self.train_split()?;
                let train_fm = self.fm.subset(&train.indices);
                let fitter = self.cfg.fitter()?;
                let point = match &model.fit_config {
                    FitConfig::Ols => (0.0, 0.0),
                    FitConfig::ElasticNet(c) => (c.lambda, c.alpha),
                    FitConfig::FusedLasso(c) => (c.lambda1, c.lambda2),
                };
                cis = bootstrap_ci(
                    &train_fm,
                    &self.groups,
                    &fitter,
                    point,
                    self.cfg.diagnostics.bootstrap_resamples,
                    self.cfg.diagnostics.confidence_level,
                    self.cfg.cv_settings(self.seed_override).seed,
                )?;
            }
            if matches!(model.fit_config, FitConfig::FusedLasso(_)) {
                self.write_coefficient_profile(model)?;
            }
        }

        let export = DiagnosticsExport {
            metrics: &metrics,
            residuals: &residuals,
            residual_report: residual_report.as_ref(),
            coefficient_cis: &cis,
            ci_level: self.cfg.diagnostics.confidence_level,
        };
        let path = self.artifacts.file("diagnostics.txt");
        write_text(&path, &export.to_text())?;
        Ok(())
    }

    /// One coefficient per voltage-grid column for fused fits.
    fn write_coefficient_profile(&mut self, model: &LinearModel<f64>) -> Result<(), CliError> {
        let mut text = String::from("feature,voltage,coefficient\n");
        for (name, coef) in model.feature_names.iter().zip(&model.coefficients) {
            let voltage = name.strip_prefix("dq_").unwrap_or("");
            text.push_str(&format!("{name},{voltage},{coef}\n"));
        }
        let path = self.artifacts.file("coefficient_profile.csv");
        write_text(&path, &text)?;
        Ok(())
    }

    pub fn write_summary(
        &mut self,
        cv: &CVResult<f64>,
        model: &LinearModel<f64>,
    ) -> Result<(), CliError> {
        let mut text = String::new();
        text.push_str(&format!("model_kind: {}\n", self.cfg.model.kind));
        text.push_str(&format!(
            "best_point: {}={} {}={}\n",
            cv.param_names.0, cv.best_point.0, cv.param_names.1, cv.best_point.1
        ));
        text.push_str(&format!("cv: k={} seed={}\n", cv.k, cv.seed));
        text.push_str(&format!(
            "active_coefficients: {}\n",
            model.coefficients.iter().filter(|&&c| c != 0.0).count()
        ));
        for split in &self.splits {
            text.push_str(&format!("split {}: {} cells\n", split.name, split.indices.len()));
        }
        for note in &self.notes {
            text.push_str(note);
            text.push('\n');
        }
        text.push_str("artifacts:\n");
        let created = self.artifacts.created.clone();
        for p in &created {
            let name = p.file_name().unwrap_or_default().to_string_lossy();
            text.push_str(&format!("  {name}\n"));
        }
        let path = self.artifacts.file("run_summary.txt");
        write_text(&path, &text)?;

        // every declared artifact must exist and be non-empty
        for p in &self.artifacts.created {
            let meta = std::fs::metadata(p)
                .map_err(|e| CliError::Data(format!("missing artifact {}: {e}", p.display())))?;
            if meta.len() == 0 {
                return Err(CliError::Data(format!("empty artifact {}", p.display())));
            }
        }
        Ok(())
    }

    /// On success returns the stdout summary; on failure removes partial
    /// outputs and propagates the error.
    pub fn finish(&mut self, result: Result<(), CliError>) -> Result<Vec<String>, CliError> {
        match result {
            Ok(()) => {
                let mut lines = self.notes.clone();
                for p in &self.artifacts.created {
                    lines.push(format!("wrote {}", p.display()));
                }
                Ok(lines)
            }
            Err(e) => {
                self.artifacts.cleanup();
                Err(e)
            }
        }
    }
}

fn parse_f64(raw: &str, path: &Path, line: usize) -> Result<f64, CliError> {
    raw.trim().parse().map_err(|_| {
        CliError::Data(format!(
            "{}:{line}: cannot parse number from {raw:?}",
            path.display()
        ))
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}
