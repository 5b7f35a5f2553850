//! Per-playlist baselines, the set classifier, and the shared model wrapper.

pub mod deepset;
pub mod knn;
pub mod logistic;
pub mod mlp;
pub mod nn;
pub mod scaler;
pub mod tree;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use deepset::{deepset_sizes, train_deepset, DeepSet, DeepSetConfig, LabeledSet, TrainLog};
pub use knn::{Knn, KnnWeights};
pub use logistic::{lbfgs, LogisticConfig, LogisticRegression};
pub use mlp::{MlpClassifier, MlpConfig};
pub use nn::{gradient_check, softmax_cross_entropy, Activation, Adam, Mlp};
pub use scaler::Standardizer;
pub use tree::{Criterion, DecisionTree, ForestConfig, RandomForest, TreeConfig};

use crate::scalar::argmax;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("a set must contain at least one playlist")]
    EmptySet,
    #[error("expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("label {label} outside 0..{n_classes}")]
    Label { label: usize, n_classes: usize },
    #[error("class {0} has no training examples")]
    MissingClass(usize),
    #[error("shape: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Validates a playlist-level training set and returns the feature count.
pub(crate) fn check_training<R: AsRef<[T]>, T>(x: &[R], y: &[usize], n_classes: usize) -> Result<usize, LearnError> {
    if x.is_empty() {
        return Err(LearnError::EmptyTrainingSet);
    }
    if x.len() != y.len() {
        return Err(LearnError::Shape(format!("{} rows vs {} labels", x.len(), y.len())));
    }
    let d = x[0].as_ref().len();
    if let Some(r) = x.iter().find(|r| r.as_ref().len() != d) {
        return Err(LearnError::Dimension { expected: d, got: r.as_ref().len() });
    }
    let mut seen = vec![false; n_classes];
    for &c in y {
        if c >= n_classes {
            return Err(LearnError::Label { label: c, n_classes });
        }
        seen[c] = true;
    }
    if let Some(c) = seen.iter().position(|&s| !s) {
        return Err(LearnError::MissingClass(c));
    }
    Ok(d)
}

/// `n / (n_classes · n_c)` per class; absent classes get 0.
pub fn balanced_weights(y: &[usize], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    for &c in y {
        counts[c] += 1;
    }
    let n = y.len() as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { n / (n_classes as f64 * c as f64) })
        .collect()
}

/// Element-wise mean of per-playlist distributions.
pub fn user_predict_average(distributions: &[Vec<f64>]) -> Vec<f64> {
    let c = distributions.first().map_or(0, Vec::len);
    let mut p = vec![0.0; c];
    for d in distributions {
        for (a, &b) in p.iter_mut().zip(d) {
            *a += b;
        }
    }
    let n = distributions.len().max(1) as f64;
    p.iter_mut().for_each(|v| *v /= n);
    p
}

/// Stratified dummy: draws each prediction from the training class prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomGuess {
    pub prior: Vec<f64>,
}

impl RandomGuess {
    pub fn fit(y: &[usize], n_classes: usize) -> Result<Self, LearnError> {
        if y.is_empty() {
            return Err(LearnError::EmptyTrainingSet);
        }
        let mut c = vec![0.0; n_classes];
        for &l in y {
            if l >= n_classes {
                return Err(LearnError::Label { label: l, n_classes });
            }
            c[l] += 1.0;
        }
        let n = y.len() as f64;
        Ok(RandomGuess { prior: c.into_iter().map(|v| v / n).collect() })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &p) in self.prior.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.prior.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    /// Large-sample weighted F1 when evaluated on labels distributed as
    /// `truth`: class `c` has precision `truth[c]` and recall `prior[c]`.
    pub fn expected_weighted_f1(&self, truth: &[f64]) -> f64 {
        truth
            .iter()
            .zip(&self.prior)
            .map(|(&p, &q)| if p + q > 0.0 { p * 2.0 * p * q / (p + q) } else { 0.0 })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "RG")]
    RandomGuess,
    #[serde(rename = "LR")]
    LogisticRegression,
    #[serde(rename = "DT")]
    DecisionTree,
    #[serde(rename = "RF")]
    RandomForest,
    #[serde(rename = "KNN")]
    Knn,
    #[serde(rename = "MLP")]
    Mlp,
    #[serde(rename = "DS")]
    DeepSet,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::RandomGuess,
        ModelKind::LogisticRegression,
        ModelKind::DecisionTree,
        ModelKind::RandomForest,
        ModelKind::Knn,
        ModelKind::Mlp,
        ModelKind::DeepSet,
    ];

    pub fn code(self) -> &'static str {
        match self {
            ModelKind::RandomGuess => "RG",
            ModelKind::LogisticRegression => "LR",
            ModelKind::DecisionTree => "DT",
            ModelKind::RandomForest => "RF",
            ModelKind::Knn => "KNN",
            ModelKind::Mlp => "MLP",
            ModelKind::DeepSet => "DS",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ModelKind {
    type Err = LearnError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.code().eq_ignore_ascii_case(s))
            .or(match s.to_ascii_lowercase().as_str() {
                "deepset" => Some(ModelKind::DeepSet),
                "random" | "dummy" => Some(ModelKind::RandomGuess),
                _ => None,
            })
            .ok_or_else(|| LearnError::Config(format!("unknown model {s:?}")))
    }
}

/// One point of a model's hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model")]
pub enum Hyperparameters {
    #[serde(rename = "RG")]
    RandomGuess,
    #[serde(rename = "LR")]
    LogisticRegression { c: f64, fit_intercept: bool, balanced: bool },
    #[serde(rename = "DT")]
    DecisionTree { criterion: Criterion, max_depth: Option<usize>, balanced: bool },
    #[serde(rename = "RF")]
    RandomForest { criterion: Criterion, max_depth: Option<usize>, balanced: bool, n_estimators: usize },
    #[serde(rename = "KNN")]
    Knn { n_neighbors: usize, weights: KnnWeights },
    #[serde(rename = "MLP")]
    Mlp { hidden: Vec<usize>, activation: Activation, learning_rate_init: f64, alpha: f64 },
    #[serde(rename = "DS")]
    DeepSet { phi_layers: usize, rho_layers: usize, activation: Activation, learning_rate: f64 },
}

impl Hyperparameters {
    pub fn kind(&self) -> ModelKind {
        match self {
            Hyperparameters::RandomGuess => ModelKind::RandomGuess,
            Hyperparameters::LogisticRegression { .. } => ModelKind::LogisticRegression,
            Hyperparameters::DecisionTree { .. } => ModelKind::DecisionTree,
            Hyperparameters::RandomForest { .. } => ModelKind::RandomForest,
            Hyperparameters::Knn { .. } => ModelKind::Knn,
            Hyperparameters::Mlp { .. } => ModelKind::Mlp,
            Hyperparameters::DeepSet { .. } => ModelKind::DeepSet,
        }
    }
}

/// Training-length settings the grids leave open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_epochs: usize,
    pub patience: usize,
    pub set_batch_size: usize,
    pub mlp_batch_size: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_epochs: 200, patience: 20, set_batch_size: 32, mlp_batch_size: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value")]
pub enum ModelParams {
    RandomGuess(RandomGuess),
    LogisticRegression(LogisticRegression<f64>),
    DecisionTree(DecisionTree),
    RandomForest(RandomForest),
    Knn(Knn<f64>),
    Mlp(MlpClassifier<f64>),
    DeepSet(DeepSet<f64>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub options: Option<FitOptions>,
    pub epochs: Option<usize>,
    pub best_epoch: Option<usize>,
    pub converged: Option<bool>,
    pub training_users: usize,
    pub training_playlists: usize,
}

/// A fitted model with its scaler and task binding. Serializes as a versioned
/// JSON checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub kind: ModelKind,
    pub task: Option<String>,
    pub classes: Vec<String>,
    pub n_features: usize,
    pub scaler: Option<Standardizer<f64>>,
    pub hyperparameters: Hyperparameters,
    pub params: ModelParams,
    pub metadata: TrainingMetadata,
}

/// A user's playlists with the user's label.
pub type UserSample = (Vec<Vec<f64>>, usize);

fn flatten(users: &[UserSample]) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (ps, l) in users {
        for p in ps {
            x.push(p.clone());
            y.push(*l);
        }
    }
    (x, y)
}

/// Fits the model described by `hp`. Per-playlist models train on every
/// playlist labeled with its owner's class; the set model trains on users and
/// uses `validation` for early stopping. Scalers see training data only.
pub fn fit_model(
    hp: &Hyperparameters,
    train: &[UserSample],
    validation: Option<&[UserSample]>,
    n_classes: usize,
    seed: u64,
    options: &FitOptions,
) -> Result<TrainedModel, LearnError> {
    if train.is_empty() {
        return Err(LearnError::EmptyTrainingSet);
    }
    if train.iter().any(|u| u.0.is_empty()) {
        return Err(LearnError::EmptySet);
    }
    let (x, y) = flatten(train);
    let n_features = x[0].len();
    let mut meta = TrainingMetadata {
        seed,
        training_users: train.len(),
        training_playlists: x.len(),
        ..Default::default()
    };
    let needs_scaler = matches!(
        hp.kind(),
        ModelKind::LogisticRegression | ModelKind::Knn | ModelKind::Mlp | ModelKind::DeepSet
    );
    let scaler = needs_scaler.then(|| Standardizer::fit(&x));
    let xs = match &scaler {
        Some(s) => s.transform_all(&x),
        None => x.clone(),
    };
    let params = match hp {
        Hyperparameters::RandomGuess => {
            let labels: Vec<usize> = train.iter().map(|u| u.1).collect();
            ModelParams::RandomGuess(RandomGuess::fit(&labels, n_classes)?)
        }
        Hyperparameters::LogisticRegression { c, fit_intercept, balanced } => {
            let cfg = LogisticConfig { c: *c, fit_intercept: *fit_intercept, balanced: *balanced, ..Default::default() };
            let m = LogisticRegression::fit(&xs, &y, n_classes, &cfg)?;
            meta.epochs = Some(m.iterations);
            meta.converged = Some(m.converged);
            ModelParams::LogisticRegression(m)
        }
        Hyperparameters::DecisionTree { criterion, max_depth, balanced } => {
            let cfg = TreeConfig { criterion: *criterion, max_depth: *max_depth, balanced: *balanced, ..Default::default() };
            ModelParams::DecisionTree(DecisionTree::fit(&xs, &y, n_classes, &cfg, seed)?)
        }
        Hyperparameters::RandomForest { criterion, max_depth, balanced, n_estimators } => {
            let tree = TreeConfig { criterion: *criterion, max_depth: *max_depth, balanced: *balanced, ..Default::default() };
            let cfg = ForestConfig { tree, n_estimators: *n_estimators };
            ModelParams::RandomForest(RandomForest::fit(&xs, &y, n_classes, &cfg, seed)?)
        }
        Hyperparameters::Knn { n_neighbors, weights } => {
            ModelParams::Knn(Knn::fit(&xs, &y, n_classes, *n_neighbors, *weights)?)
        }
        Hyperparameters::Mlp { hidden, activation, learning_rate_init, alpha } => {
            let cfg = MlpConfig {
                hidden: hidden.clone(),
                activation: *activation,
                learning_rate: *learning_rate_init,
                alpha: *alpha,
                max_epochs: options.max_epochs,
                batch_size: options.mlp_batch_size,
                ..Default::default()
            };
            let m = MlpClassifier::fit(&xs, &y, n_classes, &cfg, seed)?;
            meta.epochs = Some(m.epochs);
            meta.options = Some(*options);
            ModelParams::Mlp(m)
        }
        Hyperparameters::DeepSet { phi_layers, rho_layers, activation, learning_rate } => {
            let s = scaler.as_ref().expect("scaler fitted");
            let prep = |users: &[UserSample]| -> Vec<LabeledSet<f64>> {
                users.iter().map(|(ps, l)| (s.transform_all(ps), *l)).collect()
            };
            let tr = prep(train);
            let va = validation.map(prep);
            let mut seen = vec![false; n_classes];
            for (_, l) in &tr {
                if *l >= n_classes {
                    return Err(LearnError::Label { label: *l, n_classes });
                }
                seen[*l] = true;
            }
            if let Some(c) = seen.iter().position(|&s| !s) {
                return Err(LearnError::MissingClass(c));
            }
            let cfg = DeepSetConfig {
                phi_layers: *phi_layers,
                rho_layers: *rho_layers,
                activation: *activation,
                learning_rate: *learning_rate,
                batch_size: options.set_batch_size,
                max_epochs: options.max_epochs,
                patience: options.patience,
            };
            let (m, log) = train_deepset(&tr, va.as_deref(), n_classes, &cfg, seed)?;
            meta.epochs = Some(log.epochs);
            meta.best_epoch = Some(log.best_epoch);
            meta.options = Some(*options);
            ModelParams::DeepSet(m)
        }
    };
    Ok(TrainedModel {
        format_version: CHECKPOINT_VERSION,
        kind: hp.kind(),
        task: None,
        classes: (0..n_classes).map(|c| c.to_string()).collect(),
        n_features,
        scaler,
        hyperparameters: hp.clone(),
        params,
        metadata: meta,
    })
}

impl TrainedModel {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Binds the model to a task, replacing the numeric class names.
    pub fn with_task(mut self, task: &crate::domain::AttributeTask) -> Self {
        self.task = Some(task.name.clone());
        self.classes = task.classes.clone();
        self
    }

    fn prepare(&self, row: &[f64]) -> Result<Vec<f64>, LearnError> {
        if row.len() != self.n_features {
            return Err(LearnError::Dimension { expected: self.n_features, got: row.len() });
        }
        Ok(match &self.scaler {
            Some(s) => s.transform(row),
            None => row.to_vec(),
        })
    }

    /// Class distribution for a single playlist. The set model treats it as a
    /// one-element set.
    pub fn predict_playlist(&self, row: &[f64]) -> Result<Vec<f64>, LearnError> {
        let r = self.prepare(row)?;
        Ok(match &self.params {
            ModelParams::RandomGuess(m) => m.prior.clone(),
            ModelParams::LogisticRegression(m) => m.predict_proba(&r),
            ModelParams::DecisionTree(m) => m.predict_proba(&r).to_vec(),
            ModelParams::RandomForest(m) => m.predict_proba(&r),
            ModelParams::Knn(m) => m.predict_proba(&r),
            ModelParams::Mlp(m) => m.predict_proba(&r),
            ModelParams::DeepSet(m) => m.predict_proba(&[r])?,
        })
    }

    /// User-level distribution: the set model consumes the whole set; the
    /// others average their per-playlist distributions.
    pub fn predict_user(&self, playlists: &[Vec<f64>]) -> Result<Vec<f64>, LearnError> {
        if playlists.is_empty() {
            return Err(LearnError::EmptySet);
        }
        match &self.params {
            ModelParams::DeepSet(m) => {
                let rows = playlists.iter().map(|p| self.prepare(p)).collect::<Result<Vec<_>, _>>()?;
                m.predict_proba(&rows)
            }
            _ => {
                let d = playlists.iter().map(|p| self.predict_playlist(p)).collect::<Result<Vec<_>, _>>()?;
                Ok(user_predict_average(&d))
            }
        }
    }

    /// One class per user. The random guesser samples with `seed`; every other
    /// model takes the argmax, ties to the lowest index.
    pub fn predict_users(&self, users: &[&[Vec<f64>]], seed: u64) -> Result<Vec<usize>, LearnError> {
        if let ModelParams::RandomGuess(m) = &self.params {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            return Ok(users.iter().map(|_| m.sample(&mut rng)).collect());
        }
        users.iter().map(|u| self.predict_user(u).map(|p| argmax(&p))).collect()
    }

    pub fn to_json(&self) -> Result<String, LearnError> {
        serde_json::to_string_pretty(self).map_err(|e| LearnError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, LearnError> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| LearnError::Checkpoint(e.to_string()))?;
        let version = v.get("format_version").and_then(|x| x.as_u64());
        if version != Some(u64::from(CHECKPOINT_VERSION)) {
            return Err(LearnError::Checkpoint(format!("unsupported format_version {version:?}")));
        }
        serde_json::from_value(v).map_err(|e| LearnError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), LearnError> {
        std::fs::write(path, self.to_json()?).map_err(|e| LearnError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, LearnError> {
        let text = std::fs::read_to_string(path).map_err(|e| LearnError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn averaging_and_ties() {
        assert_eq!(user_predict_average(&[vec![0.3, 0.7]]), vec![0.3, 0.7]);
        let p = user_predict_average(&[vec![0.2, 0.8], vec![0.6, 0.4]]);
        assert!((p[0] - 0.4).abs() < 1e-15 && (p[1] - 0.6).abs() < 1e-15);
        assert_eq!(argmax(&p), 1);
        let p = user_predict_average(&[vec![0.5, 0.5], vec![0.25, 0.75], vec![0.75, 0.25]]);
        assert_eq!(p, vec![0.5, 0.5]);
        assert_eq!(argmax(&p), 0);
    }

    #[test]
    fn random_guess_prior() {
        let m = RandomGuess { prior: vec![1.0, 0.0] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..1000).all(|_| m.sample(&mut rng) == 0));
        let m = RandomGuess::fit(&[0, 1, 0, 1], 2).unwrap();
        let ones = (0..10_000).filter(|_| m.sample(&mut rng) == 1).count() as f64 / 10_000.0;
        assert!((ones - 0.5).abs() < 0.03);
    }

    #[test]
    fn balanced_weight_values() {
        assert_eq!(balanced_weights(&[0, 0, 0, 1], 2), vec![4.0 / 6.0, 2.0]);
    }

    #[test]
    fn checkpoint_roundtrip_and_version_gate() {
        let train: Vec<UserSample> = (0..20).map(|i| (vec![vec![i as f64, (i % 3) as f64]], usize::from(i >= 10))).collect();
        let hp = Hyperparameters::LogisticRegression { c: 1.0, fit_intercept: true, balanced: false };
        let m = fit_model(&hp, &train, None, 2, 0, &FitOptions::default()).unwrap();
        let back = TrainedModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let bad = m.to_json().unwrap().replace("\"format_version\": 1", "\"format_version\": 99");
        assert!(matches!(TrainedModel::from_json(&bad), Err(LearnError::Checkpoint(_))));
        assert!(matches!(m.predict_playlist(&[1.0]), Err(LearnError::Dimension { .. })));
    }

    #[test]
    fn missing_class_is_rejected() {
        let train: Vec<UserSample> = (0..5).map(|i| (vec![vec![i as f64]], 0)).collect();
        let hp = Hyperparameters::DecisionTree { criterion: Criterion::Gini, max_depth: None, balanced: false };
        assert!(matches!(fit_model(&hp, &train, None, 2, 0, &FitOptions::default()), Err(LearnError::MissingClass(1))));
    }
}
