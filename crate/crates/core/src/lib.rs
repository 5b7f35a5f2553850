//! Playlist featurization, association statistics, clustering and set-based
//! inference of user attributes.
//!
//! Numeric kernels are generic over [`scalar::Scalar`]; the aliases below fix
//! the common precisions.

pub mod domain;
pub mod features;
pub mod ingest;
pub mod scalar;
pub mod stats;
pub mod synth;
pub mod cluster;
pub mod eval;
pub mod learn;

pub use scalar::Scalar;

pub type DeepSetF64 = learn::DeepSet<f64>;
pub type DeepSetF32 = learn::DeepSet<f32>;
pub type MlpF64 = learn::Mlp<f64>;
pub type MlpF32 = learn::Mlp<f32>;
pub type MlpClassifierF64 = learn::MlpClassifier<f64>;
pub type LogisticRegressionF64 = learn::LogisticRegression<f64>;
pub type KnnF64 = learn::Knn<f64>;
pub type StandardizerF64 = learn::Standardizer<f64>;
pub type PcaF64 = cluster::Pca<f64>;
pub type PcaF32 = cluster::Pca<f32>;
pub type KMeansResultF64 = cluster::KMeansResult<f64>;
pub type TTestF64 = stats::TTest<f64>;
pub type AnovaF64 = stats::Anova<f64>;
pub type CorrelationF64 = stats::Correlation<f64>;

/// Any error raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] domain::CorpusError),
    #[error(transparent)]
    Task(#[from] domain::TaskError),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Feature(#[from] features::FeatureError),
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
    #[error(transparent)]
    Cluster(#[from] cluster::ClusterError),
    #[error(transparent)]
    Learn(#[from] learn::LearnError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
