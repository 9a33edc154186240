//! `routed-mlp`: synthesize or ingest data, tune, train, evaluate, cluster,
//! embed and tabulate participant-routed MLP classifiers.

mod commands;
mod config;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand, ValueEnum};
use routed_mlp::strategies::{KChoice, PRESET_NAMES};

/// Bad flags, config or argument combinations (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Default output directory when neither `--out-dir` nor the config sets one.
pub const OUT_DIR_ENV: &str = "ROUTED_MLP_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "routed-mlp", version, about = "Participant-routed MLP classifiers for multi-source tabular data")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML config file with optional [train], [routing], [synth], [cv],
    /// [resample], [grid], [tsne] and [analysis] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_parser = PossibleValuesParser::new(PRESET_NAMES))]
    pub strategy: Option<String>,
    /// Number of clusters: `auto` or a positive integer.
    #[arg(long, global = true, value_parser = parse_k)]
    pub k: Option<KChoice>,
    /// Resampled training runs for `evaluate`.
    #[arg(long, global = true)]
    pub runs: Option<usize>,
    /// Cross-validation folds for `tune` and `evaluate`.
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    /// Output directory (default: $ROUTED_MLP_OUT_DIR, else `out`).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

fn parse_k(s: &str) -> Result<KChoice, String> {
    s.parse().map_err(|e: routed_mlp::Error| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RouteBy {
    Features,
    Loss,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted clusters.
    Synth {
        #[arg(long)]
        participants: Option<usize>,
        /// Also write train.csv (before the date) and test.csv.
        #[arg(long)]
        split_date: Option<NaiveDate>,
    },
    /// Segment a raw CSV, expand confirmed labels and write a clean dataset.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// `participant_id,date` rows of confirmed episode days.
        #[arg(long)]
        confirmed: Option<PathBuf>,
        #[arg(long)]
        split_date: Option<NaiveDate>,
    },
    /// Grid search learning rate and dropout by cross-validation.
    Tune {
        #[arg(long)]
        data: PathBuf,
    },
    /// Route and train a strategy, writing model.json.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Test rows whose unseen participants get routed up front.
        #[arg(long)]
        test: Option<PathBuf>,
        /// grid.json from `tune`; its chosen learning rate and dropout are used.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Score a saved model, resample-train on --train and test on --test,
    /// or cross-validate on --train alone.
    Evaluate {
        #[arg(long, conflicts_with = "train")]
        model: Option<PathBuf>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, conflicts_with = "model")]
        grid: Option<PathBuf>,
    },
    /// Route participants by feature profiles or by baseline losses.
    Cluster {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Defaults to features for feature-clustered strategies, loss otherwise.
        #[arg(long, value_enum)]
        by: Option<RouteBy>,
    },
    /// t-SNE of the rows coloured by loss at the elbow epoch.
    Tsne {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        perplexity: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Tabulate report JSON files as table.csv and table.md.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.downcast_ref::<UsageError>().is_some() { 2 } else { 1 })
        }
    }
}
