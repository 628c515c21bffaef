//! Declarative run configuration (TOML). One document drives every
//! subcommand; paths are resolved relative to the config file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use cyclelife::features::{FeatureSpec, TargetTransform, VoltageGrid};
use cyclelife::model_selection::{CvSettings, FitterSpec, SelectionRule};
use cyclelife::solvers::{ENConfig, FusedLassoConfig};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub features: FeaturesConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub splits: Option<SplitsConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub manifest: PathBuf,
    #[serde(default = "default_threshold")]
    pub threshold_fraction: f64,
}

fn default_threshold() -> f64 {
    cyclelife::dataset::DEFAULT_THRESHOLD_FRACTION
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesConfig {
    #[serde(default = "default_v_high")]
    pub v_high: f64,
    #[serde(default = "default_v_low")]
    pub v_low: f64,
    #[serde(default = "default_n_points")]
    pub n_points: usize,
    #[serde(default)]
    pub target_transform: TargetTransform,
    /// Also write the ΔQ matrix export during featurize/run.
    #[serde(default = "default_true")]
    pub export_delta_q: bool,
    #[serde(rename = "spec")]
    pub specs: Vec<FeatureSpec>,
}

fn default_v_high() -> f64 {
    cyclelife::features::DEFAULT_V_HIGH
}

fn default_v_low() -> f64 {
    cyclelife::features::DEFAULT_V_LOW
}

fn default_n_points() -> usize {
    cyclelife::features::DEFAULT_GRID_POINTS
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Ols,
    ElasticNet,
    FusedLasso,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: String,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub max_sweeps: Option<usize>,
    #[serde(default)]
    pub admm_rho: Option<f64>,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub grid: GridConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub lambda: Option<Vec<f64>>,
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub lambda1: Option<Vec<f64>>,
    #[serde(default)]
    pub lambda2: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub one_std_error_rule: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k: 5,
            seed: 0,
            one_std_error_rule: false,
        }
    }
}

fn default_k() -> usize {
    5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default = "default_bins")]
    pub chi_square_bins: usize,
    /// 0 disables the bootstrap.
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default = "default_level")]
    pub confidence_level: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            chi_square_bins: 10,
            bootstrap_resamples: 200,
            confidence_level: 0.95,
        }
    }
}

fn default_bins() -> usize {
    10
}

fn default_resamples() -> usize {
    200
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitsConfig {
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub primary_test: Vec<String>,
    #[serde(default)]
    pub secondary_test: Vec<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.dataset.manifest = base.join(&cfg.dataset.manifest);
        if let Some(dir) = cfg.output.dir.take() {
            cfg.output.dir = Some(base.join(dir));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_kind(&self) -> Result<ModelKind, CliError> {
        match self.model.kind.as_str() {
            "ols" => Ok(ModelKind::Ols),
            "elastic_net" => Ok(ModelKind::ElasticNet),
            "fused_lasso" => Ok(ModelKind::FusedLasso),
            other => Err(CliError::Config(format!(
                "model.kind: unknown model kind {other:?} (expected ols | elastic_net | fused_lasso)"
            ))),
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let kind = self.model_kind()?;
        let g = &self.model.grid;
        let has_en = g.lambda.is_some() || g.alpha.is_some();
        let has_fused = g.lambda1.is_some() || g.lambda2.is_some();
        match kind {
            ModelKind::Ols => {
                if has_en || has_fused {
                    return Err(CliError::Config(
                        "model.grid: ols takes no hyperparameter grid".into(),
                    ));
                }
            }
            ModelKind::ElasticNet => {
                if has_fused {
                    return Err(CliError::Config(
                        "model.grid: elastic_net uses lambda/alpha, not lambda1/lambda2".into(),
                    ));
                }
                if g.lambda.as_ref().is_none_or(Vec::is_empty)
                    || g.alpha.as_ref().is_none_or(Vec::is_empty)
                {
                    return Err(CliError::Config(
                        "model.grid: elastic_net needs non-empty lambda and alpha lists".into(),
                    ));
                }
            }
            ModelKind::FusedLasso => {
                if has_en {
                    return Err(CliError::Config(
                        "model.grid: fused_lasso uses lambda1/lambda2, not lambda/alpha".into(),
                    ));
                }
                if g.lambda1.as_ref().is_none_or(Vec::is_empty)
                    || g.lambda2.as_ref().is_none_or(Vec::is_empty)
                {
                    return Err(CliError::Config(
                        "model.grid: fused_lasso needs non-empty lambda1 and lambda2 lists".into(),
                    ));
                }
            }
        }
        if self.features.specs.is_empty() {
            return Err(CliError::Config(
                "features.spec: at least one feature spec is required".into(),
            ));
        }
        if self.cv.k < 2 {
            return Err(CliError::Config(format!("cv.k must be at least 2, got {}", self.cv.k)));
        }
        if !(0.0 < self.dataset.threshold_fraction && self.dataset.threshold_fraction <= 1.0) {
            return Err(CliError::Config(format!(
                "dataset.threshold_fraction must lie in (0, 1], got {}",
                self.dataset.threshold_fraction
            )));
        }
        if self.diagnostics.bootstrap_resamples != 0 && self.diagnostics.bootstrap_resamples < 200 {
            return Err(CliError::Config(format!(
                "diagnostics.bootstrap_resamples must be 0 (disabled) or at least 200, got {}",
                self.diagnostics.bootstrap_resamples
            )));
        }
        if !(0.0 < self.diagnostics.confidence_level && self.diagnostics.confidence_level < 1.0) {
            return Err(CliError::Config(format!(
                "diagnostics.confidence_level must lie in (0, 1), got {}",
                self.diagnostics.confidence_level
            )));
        }
        if let Some(s) = &self.splits {
            let mut seen = std::collections::BTreeSet::new();
            for cell in s.train.iter().chain(&s.primary_test).chain(&s.secondary_test) {
                if !seen.insert(cell.as_str()) {
                    return Err(CliError::Config(format!(
                        "splits: cell {cell} is listed in more than one split"
                    )));
                }
            }
            if s.train.is_empty() {
                return Err(CliError::Config("splits.train must not be empty".into()));
            }
        }
        Ok(())
    }

    pub fn grid_points(&self) -> Result<Vec<(f64, f64)>, CliError> {
        let g = &self.model.grid;
        match self.model_kind()? {
            ModelKind::Ols => Ok(vec![(0.0, 0.0)]),
            ModelKind::ElasticNet => {
                let mut points = Vec::new();
                for &l in g.lambda.as_ref().unwrap() {
                    for &a in g.alpha.as_ref().unwrap() {
                        points.push((l, a));
                    }
                }
                Ok(points)
            }
            ModelKind::FusedLasso => {
                let mut points = Vec::new();
                for &l1 in g.lambda1.as_ref().unwrap() {
                    for &l2 in g.lambda2.as_ref().unwrap() {
                        points.push((l1, l2));
                    }
                }
                Ok(points)
            }
        }
    }

    pub fn fitter(&self) -> Result<FitterSpec<f64>, CliError> {
        Ok(match self.model_kind()? {
            ModelKind::Ols => FitterSpec::Ols,
            ModelKind::ElasticNet => {
                let d = ENConfig::new(0.0, 0.0);
                FitterSpec::ElasticNet {
                    tolerance: self.model.tolerance.unwrap_or(d.tolerance),
                    max_sweeps: self.model.max_sweeps.unwrap_or(d.max_sweeps),
                }
            }
            ModelKind::FusedLasso => {
                let d = FusedLassoConfig::new(0.0, 0.0);
                FitterSpec::FusedLasso {
                    admm_rho: self.model.admm_rho.unwrap_or(d.admm_rho),
                    tolerance: self.model.tolerance.unwrap_or(d.tolerance),
                    max_iters: self.model.max_iters.unwrap_or(d.max_iters),
                }
            }
        })
    }

    pub fn cv_settings(&self, seed_override: Option<u64>) -> CvSettings {
        CvSettings {
            k: self.cv.k,
            seed: seed_override.unwrap_or(self.cv.seed),
            rule: if self.cv.one_std_error_rule {
                SelectionRule::OneStdError
            } else {
                SelectionRule::MinMeanError
            },
        }
    }

    pub fn grid(&self) -> Result<VoltageGrid<f64>, CliError> {
        VoltageGrid::new(self.features.v_high, self.features.v_low, self.features.n_points)
            .map_err(|e| CliError::Config(format!("features: {e}")))
    }
}
