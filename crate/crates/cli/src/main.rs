//! `mil-screen`: synthetic data, splits, features, training, evaluation and
//! analysis for student-level screening from social-media posts.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::FileConfig;

/// Error kind reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "mil-screen", version, about = "Multiple-instance screening pipeline")]
struct Cli {
    /// TOML file with defaults for any flag; flags on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Observation window in days before the survey.
    #[arg(long)]
    pub window: Option<u32>,
    #[arg(long, visible_alias = "n")]
    pub n_splits: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub model_kind: Option<String>,
    /// Lexicon file, or `demo` for the built-in one.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Embedding file; repeat for text and image. The modality is read from
    /// the file header.
    #[arg(long)]
    pub embeddings: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Root for relative image paths (default: the corpus directory).
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// `recorded`, `stub`, or a `post_id,count` CSV.
    #[arg(long)]
    pub faces: Option<String>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub bags: Option<usize>,
    /// Strength of the planted class signal in [0, 1].
    #[arg(long)]
    pub signal: Option<f64>,
    #[arg(long)]
    pub text_dim: Option<usize>,
    #[arg(long)]
    pub image_dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, visible_alias = "out")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[command(flatten)]
    pub common: Common,
    /// Wall-clock limit per search in seconds; 0 disables it.
    #[arg(long)]
    pub budget_secs: Option<u64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// `posts` (default) or `bags`.
    #[arg(long)]
    pub basis: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct ThresholdArgs {
    /// Student decision threshold on the mean post probability.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Choose the threshold per split by F1 on validation students.
    #[arg(long)]
    pub tune_threshold: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[arg(long)]
    pub suite: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub split: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[arg(long)]
    pub suite: Option<PathBuf>,
    /// Conventional k-fold instead of a split suite.
    #[arg(long)]
    pub kfold: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Entries per ranking.
    #[arg(long)]
    pub top: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum EmbedCommand {
    /// Validate embedding files.
    Check {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Also require a vector for every post that needs one.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with images, face counts and embeddings.
    Synth(SynthArgs),
    /// Per-band corpus statistics.
    Stats(Common),
    /// Generate a suite of stratified train/validation/test partitions.
    Split(SplitArgs),
    /// Write post- and student-level feature tables.
    Featurize(Common),
    #[command(subcommand)]
    Embed(EmbedCommand),
    /// Train one model on one split.
    Train(TrainArgs),
    /// Cross-validate a model kind.
    Eval(EvalArgs),
    /// Hashtag rankings and linear-model coefficients.
    Analyze(AnalyzeArgs),
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p).map_err(|e| UsageError(format!("{e:#}")))?,
        None => FileConfig::default(),
    };
    if let Some(n) = cli.threads.or(file.threads) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| UsageError(e.to_string()))?;
    }
    match &cli.command {
        Command::Synth(a) => commands::synth(a, &file)?,
        Command::Stats(c) => commands::stats(c, &file)?,
        Command::Split(a) => commands::split(a, &file)?,
        Command::Featurize(c) => commands::featurize(c, &file)?,
        Command::Embed(e) => return commands::embed(e),
        Command::Train(a) => commands::train(a, &file)?,
        Command::Eval(a) => commands::eval(a, &file)?,
        Command::Analyze(a) => commands::analyze(a, &file)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
