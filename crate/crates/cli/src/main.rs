//! Batch front-end: ingest, featurize, analyze, train, evaluate, report and
//! synthesize playlist corpora.

mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use output::DatasetArgs;

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[derive(Debug, Parser)]
#[command(name = "playlist-attrs", version, about = "Infer user attributes from public playlists")]
pub struct Cli {
    /// Worker threads for parallel stages.
    #[arg(long, global = true, default_value_t = default_jobs())]
    pub jobs: usize,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect a corpus for surveyed users from the Web API or a fixture.
    Ingest(IngestArgs),
    /// Turn a corpus into per-playlist feature vectors.
    Featurize(FeaturizeArgs),
    /// Association (rq1), distribution (rq2) and cluster (rq3) analyses.
    Analyze(AnalyzeArgs),
    /// Grid-search models on one split and save the winners.
    Train(TrainArgs),
    /// Score saved models on their test split, or train and score over seeds.
    Evaluate(EvaluateArgs),
    /// Merge evaluation reports into one table.
    Report(ReportArgs),
    /// Generate a synthetic corpus with planted effects.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FixtureMode {
    /// Live Web API; needs credentials in the environment.
    Off,
    /// Serve the --corpus file through an in-process fake of the API.
    Mock,
    /// Replay recorded exchanges from --fixture.
    Replay,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Survey JSON: a list of {user_id, attributes}.
    #[arg(long, value_name = "PATH")]
    pub survey: PathBuf,
    #[arg(long, value_enum, default_value = "off")]
    pub fixture_mode: FixtureMode,
    /// Backing corpus for --fixture-mode mock.
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
    /// Recorded exchanges for --fixture-mode replay.
    #[arg(long, value_name = "PATH")]
    pub fixture: Option<PathBuf>,
    /// Response cache directory (default: none).
    #[arg(long, value_name = "DIR")]
    pub cache: Option<PathBuf>,
    /// Request rate limit.
    #[arg(long, default_value_t = 10.0)]
    pub rps: f64,
    #[arg(long, value_name = "DIR", default_value = "out/ingest")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// Genre lexicon (default: built-in).
    #[arg(long, value_name = "PATH")]
    pub lexicon: Option<PathBuf>,
    #[arg(long, value_name = "DIR", default_value = "out/features")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(subcommand)]
    pub question: Analysis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorrectionArg {
    None,
    Bh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriorArg {
    Playlist,
    User,
}

/// Shared analysis inputs.
#[derive(Debug, Args)]
pub struct AnalysisInput {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Genre lexicon when featurizing a corpus (default: built-in).
    #[arg(long, value_name = "PATH")]
    pub lexicon: Option<PathBuf>,
    /// Attribute to analyze; repeatable (default: every survey attribute).
    #[arg(long = "task", value_name = "NAME")]
    pub tasks: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Analysis {
    /// Per-feature significance tests against each attribute.
    Rq1 {
        #[command(flatten)]
        input: AnalysisInput,
        /// Significance level.
        #[arg(long, default_value_t = 0.05)]
        significance: f64,
        #[arg(long, value_enum, default_value = "none")]
        correction: CorrectionArg,
        /// Welch instead of Student for two-class attributes.
        #[arg(long)]
        welch: bool,
        #[arg(long, value_name = "DIR", default_value = "out/rq1")]
        out: PathBuf,
    },
    /// Class-conditional feature distributions and age correlations.
    Rq2 {
        #[command(flatten)]
        input: AnalysisInput,
        /// Feature to summarize; repeatable (default: all 111).
        #[arg(long = "feature", value_name = "NAME")]
        selected: Vec<String>,
        #[arg(long, value_name = "DIR", default_value = "out/rq2")]
        out: PathBuf,
    },
    /// PCA, k-means and the leading-cluster sweep.
    Rq3 {
        #[command(flatten)]
        input: AnalysisInput,
        /// Spacing of the α grid over [0, 1].
        #[arg(long, default_value_t = 0.1)]
        alpha_step: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        k_min: usize,
        #[arg(long, default_value_t = 200)]
        k_max: usize,
        #[arg(long, default_value_t = 5)]
        k_step: usize,
        /// Explained-variance share kept by PCA.
        #[arg(long, default_value_t = 0.8)]
        variance: f64,
        /// Minimum owner Simpson diversity of a kept cluster.
        #[arg(long, default_value_t = 0.5)]
        min_diversity: f64,
        #[arg(long, default_value_t = 5)]
        min_size: usize,
        /// Class prior the thresholds start from.
        #[arg(long, value_enum, default_value = "playlist")]
        prior: PriorArg,
        #[arg(long, value_name = "DIR", default_value = "out/rq3")]
        out: PathBuf,
    },
}

/// Model selection shared by `train` and `evaluate --train`.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model code (RG, LR, DT, RF, KNN, MLP, DS); repeatable (default: all).
    #[arg(long = "model", value_name = "CODE")]
    pub codes: Vec<String>,
    /// `full`, `quick`, or a grid JSON file.
    #[arg(long, value_name = "NAME|PATH", default_value = "full")]
    pub grid: String,
    /// Epoch cap for the neural models.
    #[arg(long, default_value_t = 200)]
    pub max_epochs: usize,
    /// Early-stopping patience for the neural models.
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: AnalysisInput,
    #[command(flatten)]
    pub models: ModelArgs,
    /// Split and initialization seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "DIR", default_value = "out/models")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub input: AnalysisInput,
    /// Directory written by `train`.
    #[arg(long, value_name = "DIR", conflicts_with = "train")]
    pub models: Option<PathBuf>,
    /// Train and evaluate from scratch for every seed.
    #[arg(long)]
    pub train: bool,
    #[command(flatten)]
    pub model_args: ModelArgs,
    /// Comma-separated repetition seeds for --train.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    #[arg(long, value_name = "DIR", default_value = "out/evaluation")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directories holding report.json from `evaluate`.
    #[arg(long = "input", value_name = "DIR", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_name = "DIR", default_value = "out/report")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generation spec JSON (default: a null corpus).
    #[arg(long, value_name = "PATH")]
    pub spec: Option<PathBuf>,
    /// Overrides the spec's seed (default: 0 or the spec's value).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the spec's user count (default: 300 or the spec's value).
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long, value_name = "DIR", default_value = "out/synth")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
