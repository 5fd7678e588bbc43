use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tda_cli::config::{ExperimentConfig, Method};
use tda_cli::error::{exit, CliError, CliResult};
use tda_cli::pipeline::Runner;
use tda_cli::sweep::sweep;

/// Dataset-level training-data attribution experiments.
#[derive(Debug, Parser)]
#[command(name = "tda", version)]
struct Cli {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for counterfactual retraining.
    #[arg(long, global = true, default_value_t = 1)]
    parallel: usize,

    /// Recompute stages the manifest already marks complete.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate (or import) the datasets of every seed.
    GenData,
    /// Train the base model, resuming from saved state when present.
    Train,
    /// Score training datasets with one or more methods.
    Attribute {
        /// Method name; repeat or comma-separate. Defaults to the config's list.
        #[arg(long, value_delimiter = ',')]
        method: Vec<String>,
    },
    /// Retrain without each training dataset.
    GroundTruth,
    /// Correlate method scores with the ground truth.
    Evaluate,
    /// Unlearning hyperparameter sweep.
    Sweep,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    // parse method names before touching the run directory
    let methods = match &cli.command {
        Command::Attribute { method } if !method.is_empty() => {
            method.iter().map(|m| m.parse()).collect::<CliResult<Vec<Method>>>()?
        }
        _ => cfg.methods.clone(),
    };
    let mut runner = Runner::new(cfg, cli.parallel, cli.force)?;
    match cli.command {
        Command::GenData => runner.gen_data(),
        Command::Train => runner.train(),
        Command::Attribute { .. } => runner.attribute(&methods),
        Command::GroundTruth => runner.ground_truth(),
        Command::Evaluate => {
            let report = runner.evaluate()?;
            for c in &report.correlations {
                println!("{:<12} {:<9} mean {:>7.3}  std {:>6.3}", c.method, c.metric.name(), c.mean, c.std);
            }
            Ok(())
        }
        Command::Sweep => {
            let cells = sweep(&mut runner)?;
            let failed = cells.iter().filter(|c| c.error.is_some()).count();
            println!("{} cells, {failed} failed; tables in {}", cells.len(), runner.sweep_dir().display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE as u8 } else { exit::OK as u8 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn report(e: &CliError) {
    eprintln!("error: {e}");
    let mut src = std::error::Error::source(e);
    while let Some(s) = src {
        eprintln!("  caused by: {s}");
        src = s.source();
    }
}
