use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cyclelife_cli::{
    cmd_cv, cmd_evaluate, cmd_featurize, cmd_predict, cmd_run, cmd_synth, cmd_train, CliError,
    GlobalArgs,
};

/// Battery cycle-life prediction pipeline: synthesize or ingest cycling data,
/// build capacity-difference features, cross-validate regularized linear
/// models, and export plot-ready predictions and diagnostics.
#[derive(Parser)]
#[command(name = "cyclelife", version, about)]
struct Cli {
    /// Run configuration (TOML); the synth subcommand takes a synthesis spec.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides `[output].dir` from the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed override for cross-validation / synthesis.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for grid/bootstrap evaluation; results are identical
    /// for any value.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (plus ground truth) from a spec file.
    Synth,
    /// Full pipeline: featurize, cross-validate, train, predict, evaluate.
    Run,
    /// Feature matrix and capacity-difference exports only.
    Featurize,
    /// Grouped cross-validation over the hyperparameter grid.
    Cv,
    /// Cross-validate and train the final model document.
    Train,
    /// Predictions per split from a trained model document.
    Predict,
    /// Metrics and diagnostics from an existing predictions file.
    Evaluate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global();

    let run = || -> Result<Vec<String>, CliError> {
        let config = cli
            .config
            .clone()
            .ok_or_else(|| CliError::Config("missing required --config <path>".into()))?;
        let args = GlobalArgs {
            config,
            out: cli.out.clone(),
            seed: cli.seed,
        };
        match cli.command {
            Command::Synth => cmd_synth(&args),
            Command::Run => cmd_run(&args),
            Command::Featurize => cmd_featurize(&args),
            Command::Cv => cmd_cv(&args),
            Command::Train => cmd_train(&args),
            Command::Predict => cmd_predict(&args),
            Command::Evaluate => cmd_evaluate(&args),
        }
    };

    match run() {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
