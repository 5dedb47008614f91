//! `copypaste`: synthetic data, feature extraction, training, scoring, noise mixing and
//! architecture shapes from one binary.
//!
//! Every command takes an optional `--config FILE` of `key = value` lines; flags win over
//! the file. Exit status is 0 on success, 1 on runtime failure and 2 on usage errors.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "copypaste",
    version,
    about = "CopyPaste augmentation pipeline for speech emotion recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic emotion corpus and stand-in noise files.
    Synth(SynthArgs),
    /// Extract MFCC features (with VAD and mean normalization) into the cache.
    Features(FeaturesArgs),
    /// Train classifiers and write checkpoints plus per-epoch dev history.
    Train(TrainArgs),
    /// Score checkpoints on a manifest split, or run session cross-validation.
    Eval(EvalArgs),
    /// Build the noise-augmented training set or a noisy test set.
    Noisify(NoisifyArgs),
    /// Print the stage output sizes of the full convolutional architecture.
    Shapes(ShapesArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_speakers: Option<usize>,
    #[arg(long)]
    pub utts_per_speaker: Option<usize>,
    #[arg(long)]
    pub min_duration: Option<f64>,
    #[arg(long)]
    pub max_duration: Option<f64>,
}

#[derive(Args, Debug)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Cache directory; defaults to $COPYPASTE_CACHE, then `<manifest dir>/cache`.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Name of the neutral label.
    #[arg(long)]
    pub neutral: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct TrainOpts {
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of independently seeded runs.
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub aug_fraction: Option<f64>,
    #[arg(long)]
    pub crop_seconds: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus manifest; its train and dev splits are used.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Manifest whose train split replaces the corpus train split, e.g. a noisified one.
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    /// Output directory for checkpoints and history.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub neutral: Option<String>,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// A single checkpoint file.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory of `run<i>.ckpt` files written by `train --runs`.
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    /// Split to score: train, dev or test.
    #[arg(long)]
    pub split: Option<String>,
    /// Session cross-validation with this many folds; trains one model set per fold.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Also write the results as `key<TAB>value` lines to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub neutral: Option<String>,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Args, Debug)]
pub struct NoisifyArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Noise manifest of `<tag> <path>` lines.
    #[arg(long)]
    pub noise: Option<PathBuf>,
    /// `train` for the six-copy training set, `test` for a noisy test set.
    #[arg(long)]
    pub mode: Option<String>,
    /// Test-set SNR in dB.
    #[arg(long, allow_hyphen_values = true)]
    pub snr: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub neutral: Option<String>,
}

#[derive(Args, Debug)]
pub struct ShapesArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub frames: Option<String>,
    #[arg(long)]
    pub classes: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Features(a) => commands::features(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Noisify(a) => commands::noisify(a),
        Command::Shapes(a) => commands::shapes(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
