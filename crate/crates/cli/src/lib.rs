//! Batch pipeline commands behind the `cyclelife` binary: synthesize or
//! ingest cycling data, build features, cross-validate, train, predict, and
//! evaluate, emitting plot-ready delimited text files.

pub mod config;
mod pipeline;

use std::fmt;
use std::path::{Path, PathBuf};

use cyclelife::error::Error as CoreError;
use cyclelife::synth::SynthSpec;

pub use pipeline::Pipeline;

/// Errors surfaced by the CLI, already classified for the exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit 2: configuration problems.
    Config(String),
    /// Exit 3: dataset/feature problems.
    Data(String),
    /// Exit 4: solver non-convergence or instability.
    Solver(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Solver(m) => write!(f, "{m}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e.root() {
            CoreError::Config(_) => CliError::Config(e.to_string()),
            CoreError::NonConvergence { .. } | CoreError::BootstrapUnstable { .. } => {
                CliError::Solver(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Solver(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Solver(_) => "solver",
        }
    }

    /// Single machine-readable line for the error stream.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "error": {
                "code": self.exit_code(),
                "kind": self.kind(),
                "message": self.to_string(),
            }
        })
        .to_string()
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone)]
pub struct GlobalArgs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create output dir {}: {e}", dir.display())))
}

/// `synth`: generate a synthetic dataset plus ground truth from a spec file.
pub fn cmd_synth(args: &GlobalArgs) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| {
        CliError::Config(format!("cannot read spec {}: {e}", args.config.display()))
    })?;
    let mut spec: SynthSpec = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("spec {}: {e}", args.config.display())))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let out = args
        .out
        .clone()
        .ok_or_else(|| CliError::Config("synth requires --out <dir>".into()))?;
    ensure_dir(&out)?;
    let (dataset, truth) = cyclelife::synth::generate_dataset::<f64>(&spec)?;
    let manifest = cyclelife::dataset::write_dataset(&dataset, &out)?;
    cyclelife::synth::write_ground_truth(&truth, out.join("ground_truth.csv"))?;
    Ok(vec![
        format!("wrote {} cells to {}", dataset.len(), out.display()),
        format!("manifest: {}", manifest.display()),
        format!("ground truth: {}", out.join("ground_truth.csv").display()),
    ])
}

/// `featurize`: feature matrix (+ ΔQ export) only.
pub fn cmd_featurize(args: &GlobalArgs) -> Result<Vec<String>, CliError> {
    let mut p = Pipeline::load(args)?;
    let result = p.stage_featurize();
    p.finish(result)
}

/// `cv`: featurize, then grouped cross-validation over the grid.
pub fn cmd_cv(args: &GlobalArgs) -> Result<Vec<String>, CliError> {
    let mut p = Pipeline::load(args)?;
    let result = p.stage_featurize().and_then(|_| p.stage_cv().map(|_| ()));
    p.finish(result)
}

/// `train`: featurize, cross-validate, train the final model.
pub fn cmd_train(args: &GlobalArgs) -> Result<Vec<String>, CliError> {
    let mut p = Pipeline::load(args)?;
    let result = p
        .stage_featurize()
        .and_then(|_| p.stage_cv())
        .and_then(|cv| p.stage_train(&cv).map(|_| ()));
    p.finish(result)
}

/// `predict`: load the trained model document and write per-split
/// predictions.
pub fn cmd_predict(args: &GlobalArgs) -> Result<Vec<String>, CliError> {
    let mut p = Pipeline::load(args)?;
    let result = (|| {
        let model = p.load_model()?;
        p.stage_predict(&model).map(|_| ())
    })();
    p.finish(result)
}

/// `evaluate`: metrics and diagnostics from an existing predictions file.
pub fn cmd_evaluate(args: &GlobalArgs) -> Result<Vec<String>, CliError> {
    let mut p = Pipeline::load(args)?;
    let result = (|| {
        let preds = p.read_predictions()?;
        p.stage_evaluate(&preds, None)
    })();
    p.finish(result)
}

/// `run`: the whole pipeline, one config.
pub fn cmd_run(args: &GlobalArgs) -> Result<Vec<String>, CliError> {
    let mut p = Pipeline::load(args)?;
    let result = (|| {
        p.stage_featurize()?;
        let cv = p.stage_cv()?;
        let model = p.stage_train(&cv)?;
        let preds = p.stage_predict(&model)?;
        p.stage_evaluate(&preds, Some(&model))?;
        p.write_summary(&cv, &model)
    })();
    p.finish(result)
}
