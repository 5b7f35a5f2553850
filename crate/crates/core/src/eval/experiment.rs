use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::GridSpec;
use super::metrics::weighted_f1;
use super::split::{split_dataset, SplitPlan};
use super::EvalError;
use crate::domain::{AttributeTask, FeatureDataset};
use crate::learn::{fit_model, FitOptions, Hyperparameters, ModelKind, TrainedModel, UserSample};

/// User samples of one partition, in plan order.
pub fn partition_samples(dataset: &FeatureDataset, task: &AttributeTask, ids: &[String]) -> Vec<UserSample> {
    let index: HashMap<&str, _> = dataset.users.iter().map(|u| (u.user_id.as_str(), u)).collect();
    ids.iter()
        .filter_map(|id| index.get(id.as_str()))
        .filter_map(|u| u.label(task).map(|y| (u.playlists.iter().map(|p| p.values.clone()).collect(), y)))
        .collect()
}

/// User-level weighted F1 of `model` on `users`.
pub fn evaluate_users(model: &TrainedModel, users: &[UserSample], seed: u64) -> Result<f64, EvalError> {
    let sets: Vec<&[Vec<f64>]> = users.iter().map(|u| u.0.as_slice()).collect();
    let pred = model.predict_users(&sets, seed)?;
    let truth: Vec<usize> = users.iter().map(|u| u.1).collect();
    Ok(weighted_f1(&truth, &pred))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigScore {
    pub hyperparameters: Hyperparameters,
    pub validation_f1: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub best: Hyperparameters,
    pub best_score: f64,
    pub model: TrainedModel,
    pub scores: Vec<ConfigScore>,
}

/// Fits every configuration on `train` and keeps the best validation weighted
/// F1; ties go to the earliest configuration.
pub fn grid_search(
    grid: &[Hyperparameters],
    train: &[UserSample],
    validation: &[UserSample],
    n_classes: usize,
    seed: u64,
    options: &FitOptions,
) -> Result<GridOutcome, EvalError> {
    let kind = grid.first().map(Hyperparameters::kind).ok_or(EvalError::EmptyGrid(ModelKind::RandomGuess))?;
    let runs: Vec<(Result<(TrainedModel, f64), String>, &Hyperparameters)> = grid
        .par_iter()
        .map(|hp| {
            let r = fit_model(hp, train, Some(validation), n_classes, seed, options)
                .map_err(|e| e.to_string())
                .and_then(|m| evaluate_users(&m, validation, seed).map(|s| (m, s)).map_err(|e| e.to_string()));
            (r, hp)
        })
        .collect();
    let scores = runs
        .iter()
        .map(|(r, hp)| ConfigScore {
            hyperparameters: (*hp).clone(),
            validation_f1: r.as_ref().ok().map(|x| x.1),
            error: r.as_ref().err().cloned(),
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, (r, _)) in runs.iter().enumerate() {
        if let Ok((_, s)) = r {
            if best.is_none_or(|(_, b)| *s > b) {
                best = Some((i, *s));
            }
        }
    }
    let (i, best_score) = best.ok_or_else(|| {
        let first = runs.iter().find_map(|r| r.0.as_ref().err().cloned()).unwrap_or_default();
        EvalError::AllConfigsFailed { kind, first_error: first }
    })?;
    let (r, hp) = runs.into_iter().nth(i).unwrap();
    let (model, _) = r.unwrap();
    Ok(GridOutcome { best: hp.clone(), best_score, model, scores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repetition {
    pub seed: u64,
    pub test_f1: Option<f64>,
    pub validation_f1: Option<f64>,
    pub best: Option<Hyperparameters>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub kind: ModelKind,
    pub repetitions: Vec<Repetition>,
    /// Mean and population std over successful repetitions.
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMetadata {
    pub seeds: Vec<u64>,
    pub split: String,
    pub evaluation: String,
    pub options: FitOptions,
    pub grid_sizes: BTreeMap<ModelKind, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub task: String,
    pub models: Vec<ModelResult>,
    pub splits: Vec<SplitPlan>,
    pub metadata: ExperimentMetadata,
}

impl ExperimentReport {
    pub fn result(&self, kind: ModelKind) -> Option<&ModelResult> {
        self.models.iter().find(|m| m.kind == kind)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kinds: Vec<ModelKind>,
    pub grid: GridSpec,
    pub seeds: Vec<u64>,
    pub options: FitOptions,
}

impl ExperimentConfig {
    pub fn new(grid: GridSpec) -> Self {
        ExperimentConfig { kinds: ModelKind::ALL.to_vec(), grid, seeds: (0..5).collect(), options: FitOptions::default() }
    }
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (Some(m), Some(v.sqrt()))
}

/// For each seed: split, grid-search every model on validation, evaluate the
/// winner once on test at user level. Model failures are recorded per
/// repetition.
pub fn run_experiment(
    dataset: &FeatureDataset,
    task: &AttributeTask,
    config: &ExperimentConfig,
) -> Result<ExperimentReport, EvalError> {
    let splits = config
        .seeds
        .iter()
        .map(|&s| split_dataset(dataset, task, s))
        .collect::<Result<Vec<_>, _>>()?;
    let parts: Vec<[Vec<UserSample>; 3]> = splits
        .iter()
        .map(|p| {
            [
                partition_samples(dataset, task, &p.train),
                partition_samples(dataset, task, &p.validation),
                partition_samples(dataset, task, &p.test),
            ]
        })
        .collect();
    let jobs: Vec<(ModelKind, usize)> =
        config.kinds.iter().flat_map(|&k| (0..config.seeds.len()).map(move |r| (k, r))).collect();
    let k = task.n_classes();
    let outcomes: Vec<(ModelKind, Repetition)> = jobs
        .par_iter()
        .map(|&(kind, r)| {
            let seed = config.seeds[r];
            let [train, val, test] = &parts[r];
            let fail = |e: String| Repetition { seed, test_f1: None, validation_f1: None, best: None, error: Some(e) };
            let Some(grid) = config.grid.get(kind) else {
                return (kind, fail(format!("no grid for {kind}")));
            };
            let rep = match grid_search(grid, train, val, k, seed, &config.options) {
                Ok(out) => match evaluate_users(&out.model, test, seed) {
                    Ok(f1) => Repetition { seed, test_f1: Some(f1), validation_f1: Some(out.best_score), best: Some(out.best), error: None },
                    Err(e) => fail(e.to_string()),
                },
                Err(e) => fail(e.to_string()),
            };
            if let Some(e) = &rep.error {
                warn!("{} {kind} seed {seed}: {e}", task.name);
            } else {
                info!("{} {kind} seed {seed}: test F1 {:.4}", task.name, rep.test_f1.unwrap_or(f64::NAN));
            }
            (kind, rep)
        })
        .collect();
    let models = config
        .kinds
        .iter()
        .map(|&kind| {
            let repetitions: Vec<Repetition> = outcomes.iter().filter(|o| o.0 == kind).map(|o| o.1.clone()).collect();
            let ok: Vec<f64> = repetitions.iter().filter_map(|r| r.test_f1).collect();
            let (mean, std) = mean_std(&ok);
            ModelResult { kind, repetitions, mean, std }
        })
        .collect();
    Ok(ExperimentReport {
        task: task.name.clone(),
        models,
        splits,
        metadata: ExperimentMetadata {
            seeds: config.seeds.clone(),
            split: "stratified user-grouped split, 70/10/20, largest-remainder class quotas".into(),
            evaluation: "user-level weighted F1; per-playlist models average their distributions".into(),
            options: config.options,
            grid_sizes: config.kinds.iter().map(|&k| (k, config.grid.len(k))).collect(),
        },
    })
}

/// `"mean±std"` on a 0-100 scale with one decimal.
pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{:.1}±{:.1}", mean * 100.0, std * 100.0)
}

/// Models as rows, tasks as columns.
pub fn report_table(reports: &[ExperimentReport]) -> String {
    let mut kinds: Vec<ModelKind> = Vec::new();
    for r in reports {
        for m in &r.models {
            if !kinds.contains(&m.kind) {
                kinds.push(m.kind);
            }
        }
    }
    kinds.sort();
    let mut out = String::from("model");
    for r in reports {
        out.push(',');
        out.push_str(&r.task);
    }
    out.push('\n');
    for kind in kinds {
        out.push_str(kind.code());
        for r in reports {
            out.push(',');
            if let Some(ModelResult { mean: Some(m), std: Some(s), .. }) = r.result(kind) {
                let _ = write!(out, "{}", format_cell(*m, *s));
            } else {
                out.push_str("failed");
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_report(dir: &Path, reports: &[ExperimentReport]) -> Result<(), EvalError> {
    let io = |e: std::io::Error| EvalError::Io(e.to_string());
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join("report.csv"), report_table(reports)).map_err(io)?;
    let json = serde_json::to_string_pretty(reports).map_err(|e| EvalError::Io(e.to_string()))?;
    std::fs::write(dir.join("report.json"), json).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_and_std_of_one() {
        assert_eq!(format_cell(0.71234, 0.0123), "71.2±1.2");
        assert_eq!(mean_std(&[0.5]), (Some(0.5), Some(0.0)));
    }

    #[test]
    fn one_configuration_grid_returns_it() {
        let mk = |i: usize| -> UserSample { (vec![vec![i as f64, 1.0]], usize::from(i % 2 == 0)) };
        let train: Vec<UserSample> = (0..20).map(mk).collect();
        let val: Vec<UserSample> = (20..26).map(mk).collect();
        let hp = Hyperparameters::Knn { n_neighbors: 3, weights: crate::learn::KnnWeights::Uniform };
        let out = grid_search(std::slice::from_ref(&hp), &train, &val, 2, 0, &FitOptions::default()).unwrap();
        assert_eq!(out.best, hp);
        assert_eq!(out.scores.len(), 1);
    }
}
