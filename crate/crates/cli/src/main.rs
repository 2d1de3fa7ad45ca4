use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use emocause::heads::Variant;
use emocause::knowledge::KnowledgeSource;
use emocause::tensor::PoolMode;
use emocause::train::CometRelations;

mod analyze;
mod commands;
mod manifest;

/// Emotion classification and cause span tagging for news headlines.
#[derive(Debug, Parser)]
#[command(name = "emocause", version)]
pub struct Cli {
    /// Directory under which runs are created when --out is omitted.
    #[arg(long, global = true, env = "EMOCAUSE_ROOT", default_value = "runs")]
    root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model per seed and write checkpoints, history and reports.
    Train(TrainArgs),
    /// Score a saved checkpoint on one split.
    Eval(EvalArgs),
    /// Predict emotion and cause span for a single headline.
    Predict(PredictArgs),
    /// Random hyperparameter search over the dev split.
    Search(SearchArgs),
    /// Compare gold and non-gold accuracy across report directories.
    Analyze(AnalyzeArgs),
    /// Write a synthetic corpus as JSON lines.
    Synth(SynthArgs),
    /// Build a knowledge cache file for a corpus from the bundled lexicon.
    Cache(CacheArgs),
    /// Re-run the command recorded in a manifest.json.
    Replay(ReplayArgs),
}

/// Options shared by commands that build a training configuration.
/// Precedence: built-in defaults, then --config, then flags.
#[derive(Debug, Args, Clone)]
pub struct ConfigArgs {
    /// Flat JSON training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    /// none, lexicon or file:PATH.
    #[arg(long)]
    knowledge: Option<KnowledgeSource>,
    /// xReact, oReact, both or none. Defaults to both when a knowledge source is given.
    #[arg(long)]
    relations: Option<CometRelations>,
    #[arg(long)]
    pooler: Option<PoolMode>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// Training corpus, JSON lines.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Train a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// A checkpoint directory (or a run directory holding `checkpoint/`).
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitName,
    /// Print the CSV header and row instead of JSON.
    #[arg(long)]
    csv: bool,
    /// Also write report.json, per_emotion.csv and manifest.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    headline: String,
    /// Override the checkpoint's knowledge source.
    #[arg(long)]
    knowledge: Option<KnowledgeSource>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SearchTarget {
    Emotion,
    Cause,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// JSON search space; defaults to the built-in ranges.
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long, default_value_t = 75)]
    budget: usize,
    #[arg(long, value_enum)]
    target: SearchTarget,
    /// Seed of the sampler.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Run or eval directories containing report.json.
    #[arg(long, num_args = 1.., required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 700)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Template bank file; defaults to the bundled bank.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CacheArgs {
    #[arg(long)]
    data: PathBuf,
    /// Lexicon file; defaults to the bundled lexicon.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Phrases kept per relation.
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    manifest: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
