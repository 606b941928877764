mod commands;
mod data;
mod error;
mod manifest;
mod model_file;
mod schema;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dvqr_core::bicop::Criterion;
use dvqr_core::dvine::Mode;

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "dvqr", version, about = "D-vine copula quantile regression for mixed discrete-continuous data")]
struct Cli {
    /// Worker threads for parallel fitting (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct FitArgs {
    /// Column schema: a file path or an inline name:kind:role list.
    #[arg(long)]
    pub schema: String,
    #[arg(long, default_value = "parametric")]
    pub mode: Mode,
    #[arg(long, default_value = "aic")]
    pub penalty: Criterion,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Jitter replicates for discrete columns in nonparametric mode.
    #[arg(long, default_value_t = 1)]
    pub jitter_replicates: usize,
    /// Family candidates for parametric pairs, e.g. "clayton:0,clayton:180,frank".
    #[arg(long)]
    pub families: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write it as JSON.
    Fit {
        /// Training data CSV with a header row.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
        /// Manifest path (default: <out>.manifest.json).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Predict conditional quantiles for every row of a CSV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated quantile levels in (0,1).
        #[arg(long, default_value = "0.5")]
        alphas: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// K-fold cross-validated tick losses per quantile level and mode.
    Crossval {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value = "0.5")]
        alphas: String,
        /// Additional modes to evaluate besides --mode, comma separated.
        #[arg(long)]
        also_modes: Option<String>,
        /// Score the observed response as its own prediction (sanity check).
        #[arg(long, hide = true)]
        perfect_predictor: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run a simulation grid described by a key = value config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for results.csv, manifest.json and the variance cache.
        #[arg(long)]
        out_dir: PathBuf,
        /// Master seed; overrides the config's seed key when given.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        penalty: Option<Criterion>,
        #[arg(long)]
        jitter_replicates: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Fit { data, fit, out, manifest } => commands::fit(&data, &fit, &out, manifest.as_deref()),
        Command::Predict {
            model,
            data,
            alphas,
            out,
            manifest,
        } => commands::predict(&model, &data, &alphas, &out, manifest.as_deref()),
        Command::Crossval {
            data,
            fit,
            folds,
            alphas,
            also_modes,
            perfect_predictor,
            out,
            manifest,
        } => commands::crossval(commands::CrossvalRequest {
            data: &data,
            fit: &fit,
            folds,
            alphas: &alphas,
            also_modes: also_modes.as_deref(),
            perfect_predictor,
            out: &out,
            manifest: manifest.as_deref(),
        }),
        Command::Simulate {
            config,
            out_dir,
            seed,
            penalty,
            jitter_replicates,
        } => commands::simulate(&config, &out_dir, seed, penalty, jitter_replicates),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dvqr: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
