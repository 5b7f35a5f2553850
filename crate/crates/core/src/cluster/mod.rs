//! Playlist clustering and leading-cluster detection.

mod kmeans;
mod leading;
pub mod linalg;
mod pca;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kmeans::{kmeans, kmeans_with, select_k, silhouette, KMeansOptions, KMeansResult, KRange, KSelection};
pub use leading::{
    alpha_grid, build_clusters, class_prior, detect_leading, filter_clusters, is_leading, leading_threshold,
    mark_leading, sweep_alpha, task_threshold, write_json, write_sweep_csv, ClusterReport, PriorLevel, SweepPoint,
    Threshold,
};
pub use pca::{pca_reduce, Pca, PcaOptions};

use crate::domain::{AttributeTask, FeatureDataset};

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("{rows} row(s), need at least {needed}")]
    TooFewRows { rows: usize, needed: usize },
    #[error("rows have differing lengths")]
    Ragged,
    #[error("k = {k} invalid for {rows} row(s)")]
    BadK { k: usize, rows: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("α = {0} outside [0, 1]")]
    BadAlpha(f64),
    #[error("prior {0:?} is not a distribution")]
    BadPrior(Vec<f64>),
    #[error("task {0:?} has no labeled playlists")]
    NoLabels(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub pca: PcaOptions<f64>,
    pub k_range: KRange,
    pub kmeans: KMeansOptions,
    pub seed: u64,
    pub min_diversity: f64,
    pub min_size: usize,
    pub alphas: Vec<f64>,
    pub prior_level: PriorLevel,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            pca: PcaOptions::default(),
            k_range: KRange::default(),
            kmeans: KMeansOptions::default(),
            seed: 0,
            min_diversity: 0.5,
            min_size: 5,
            alphas: alpha_grid(0.1).expect("static grid"),
            prior_level: PriorLevel::Playlist,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAnalysis {
    pub config: ClusterConfig,
    pub n_playlists: usize,
    pub n_components: usize,
    pub explained_variance: f64,
    pub dropped_columns: Vec<String>,
    pub selected_k: usize,
    pub silhouette: Vec<(usize, f64)>,
    pub range_clipped: bool,
    /// Every cluster, before filtering.
    pub clusters: Vec<ClusterReport>,
    /// Ids surviving the diversity and size filters.
    pub kept: Vec<usize>,
    pub priors: BTreeMap<String, Vec<f64>>,
    pub sweeps: BTreeMap<String, Vec<SweepPoint>>,
    pub skipped_tasks: Vec<String>,
}

/// Standardize, reduce, cluster at the silhouette-best k, filter, then sweep α
/// for each task.
pub fn analyze_clusters(
    dataset: &FeatureDataset,
    tasks: &[AttributeTask],
    config: &ClusterConfig,
) -> Result<ClusterAnalysis, ClusterError> {
    let x: Vec<Vec<f64>> = dataset.users.iter().flat_map(|u| u.playlists.iter().map(|p| p.values.clone())).collect();
    let (projected, pca) = pca_reduce(&x, &config.pca)?;
    let sel = select_k(&projected, config.k_range, config.seed, &config.kmeans)?;
    let mut clusters = build_clusters(dataset, &sel.best.assignments, tasks)?;
    let kept_ids: Vec<usize> = filter_clusters(clusters.clone(), config.min_diversity, config.min_size)
        .iter()
        .map(|c| c.cluster_id)
        .collect();
    let mut priors = BTreeMap::new();
    let mut sweeps = BTreeMap::new();
    let mut skipped = Vec::new();
    for task in tasks {
        let prior = match class_prior(dataset, task, config.prior_level) {
            Ok(p) => p,
            Err(ClusterError::NoLabels(_)) => {
                skipped.push(task.name.clone());
                continue;
            }
            Err(e) => return Err(e),
        };
        let kept: Vec<ClusterReport> = clusters.iter().filter(|c| kept_ids.contains(&c.cluster_id)).cloned().collect();
        let sweep = sweep_alpha(&kept, task, &prior, &config.alphas)?;
        mark_leading(&mut clusters, &task.name, &sweep);
        priors.insert(task.name.clone(), prior);
        sweeps.insert(task.name.clone(), sweep);
    }
    Ok(ClusterAnalysis {
        config: config.clone(),
        n_playlists: x.len(),
        n_components: pca.n_components(),
        explained_variance: pca.explained_variance(),
        dropped_columns: pca.dropped_columns.iter().map(|&c| dataset.schema.names[c].clone()).collect(),
        selected_k: sel.best_k,
        silhouette: sel.scores,
        range_clipped: sel.range_clipped,
        clusters,
        kept: kept_ids,
        priors,
        sweeps,
        skipped_tasks: skipped,
    })
}
