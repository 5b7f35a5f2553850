use std::path::{Path, PathBuf};
use std::process::ExitCode;

use playlist_attrs::cluster::ClusterError;
use playlist_attrs::domain::{CorpusError, TaskError};
use playlist_attrs::eval::EvalError;
use playlist_attrs::features::FeatureError;
use playlist_attrs::ingest::IngestError;
use playlist_attrs::learn::LearnError;
use playlist_attrs::stats::StatsError;
use playlist_attrs::synth::SynthError;

/// Every failure the binary reports, each class with its own exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("input not found: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{0}")]
    Precondition(String),
    #[error("analysis failed: {0}")]
    Compute(String),
    #[error("remote api: {0}")]
    Remote(String),
    #[error("cannot write output: {0}")]
    Output(String),
}

impl CliError {
    /// 2 is also what clap uses for unknown flags.
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 2,
            CliError::MissingInput(_) => 3,
            CliError::Invalid(_) => 4,
            CliError::Precondition(_) => 5,
            CliError::Compute(_) => 6,
            CliError::Remote(_) => 7,
            CliError::Output(_) => 8,
        })
    }

    pub fn output(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Output(format!("{}: {e}", path.display()))
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        use IngestError::*;
        match e {
            Schema { .. } | Version { .. } | Corpus(_) | Fixture(_) | Malformed { .. } => CliError::Invalid(e.to_string()),
            MissingEnv(_) => CliError::Precondition(e.to_string()),
            Io(_) => CliError::Output(e.to_string()),
            _ => CliError::Remote(e.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<TaskError> for CliError {
    fn from(e: TaskError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::Io(_) => CliError::Output(e.to_string()),
            FeatureError::Lexicon { .. } | FeatureError::LexiconSize(_) | FeatureError::CsvLayout(_) | FeatureError::Csv(_) => {
                CliError::Invalid(e.to_string())
            }
            _ => CliError::Compute(e.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::BadAlpha(_) | StatsError::UnknownFeature(_) => CliError::Usage(e.to_string()),
            _ => CliError::Compute(e.to_string()),
        }
    }
}

impl From<ClusterError> for CliError {
    fn from(e: ClusterError) -> Self {
        match e {
            ClusterError::BadAlpha(_) => CliError::Usage(e.to_string()),
            ClusterError::Io(_) => CliError::Output(e.to_string()),
            _ => CliError::Compute(e.to_string()),
        }
    }
}

impl From<LearnError> for CliError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::Checkpoint(_) => CliError::Invalid(e.to_string()),
            LearnError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Compute(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Learn(l) => l.into(),
            EvalError::Io(_) => CliError::Output(e.to_string()),
            EvalError::EmptyGrid(_) => CliError::Invalid(e.to_string()),
            EvalError::TooFewUsers { .. } | EvalError::Degenerate(_) => CliError::Precondition(e.to_string()),
            _ => CliError::Compute(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io(_) => CliError::Output(e.to_string()),
            SynthError::Corpus(_) => CliError::Compute(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}
