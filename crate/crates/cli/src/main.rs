//! `dtsst`: synthesize, transform, augment, train, evaluate, and compare.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "dtsst", version, about = "Dual-branch transformer pipeline for EEG decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset of class-specific rhythms in noise.
    Synth(SynthArgs),
    /// Condition recordings and write wavelet sidecars.
    Transform(TransformArgs),
    /// Write segment-and-reassemble trials for inspection.
    Augment(AugmentArgs),
    /// Train a model and log per-epoch metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint and export a report.
    Eval(EvalArgs),
    /// Paired Wilcoxon signed-rank test on two CSV columns.
    Stats(StatsArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Comma-separated rhythm frequency of each class in Hz.
    #[arg(long, value_delimiter = ',', default_values_t = [8.0, 16.0])]
    pub classes: Vec<f64>,
    /// Training trials per class.
    #[arg(long, default_value_t = 32)]
    pub n: usize,
    /// Held-out trials per class.
    #[arg(long, default_value_t = 0)]
    pub test_n: usize,
    #[arg(long, default_value_t = 4)]
    pub ch: usize,
    #[arg(long, default_value_t = 64)]
    pub t: usize,
    #[arg(long, default_value_t = 64.0)]
    pub fs: f64,
    /// Standard deviation of the additive white noise.
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TransformArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Start from a dataset preset's signal settings.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub freq_lo: Option<f64>,
    #[arg(long)]
    pub freq_hi: Option<f64>,
    #[arg(long)]
    pub freq_step: Option<f64>,
    /// Epoch window `start,end` in seconds.
    #[arg(long, value_parser = parse_pair)]
    pub window: Option<(f64, f64)>,
    /// Band-pass corners `lo,hi` in Hz.
    #[arg(long, value_parser = parse_pair)]
    pub band: Option<(f64, f64)>,
    /// Cut recordings into non-overlapping windows of this many seconds.
    #[arg(long)]
    pub segment: Option<f64>,
}

#[derive(Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Segments per trial.
    #[arg(long)]
    pub r: usize,
    /// Trials to generate, cycling over the classes.
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct ConfigArgs {
    /// TOML or JSON run configuration.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in configuration: bci2a, bci2b, seed, or mini.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub base: ConfigArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Comma-separated ablation switches, e.g. `no-transformer,no-augment`.
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long)]
    pub no_transformer: bool,
    #[arg(long)]
    pub no_branch1: bool,
    #[arg(long)]
    pub no_b2_input1: bool,
    #[arg(long)]
    pub no_b2_input2: bool,
    #[arg(long)]
    pub no_augment: bool,
    /// Print a progress line every this many epochs; 0 silences it.
    #[arg(long, default_value_t = 10)]
    pub log_every: usize,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint file.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Run configuration; defaults to `resolved_config.json` beside the
    /// checkpoint.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    /// Trials to evaluate: test, train, or all.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Chance model for kappa: marginal or uniform.
    #[arg(long)]
    pub chance: Option<String>,
    /// Also write pooled features to `features.eegt`.
    #[arg(long)]
    pub features: bool,
}

#[derive(Args)]
pub struct StatsArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// First column name.
    #[arg(long)]
    pub a: String,
    /// Second column name.
    #[arg(long)]
    pub b: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "mini")]
    pub preset: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got {s:?}"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok((num(a)?, num(b)?))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Transform(a) => commands::transform(a),
        Command::Augment(a) => commands::augment(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Stats(a) => commands::stats(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
