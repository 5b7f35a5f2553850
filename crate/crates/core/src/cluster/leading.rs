use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ClusterError;
use crate::domain::{AttributeTask, FeatureDataset};
use crate::features::simpson_diversity;

/// Which population the class priors are measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorLevel {
    #[default]
    Playlist,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub attribute: String,
    pub alpha: f64,
    pub values: Vec<f64>,
}

/// Per-class blend of the prior toward 1: `P + α(1 − P)`.
pub fn leading_threshold(prior: &[f64], alpha: f64) -> Result<Vec<f64>, ClusterError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ClusterError::BadAlpha(alpha));
    }
    let total: f64 = prior.iter().sum();
    if prior.is_empty() || prior.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (total - 1.0).abs() > 1e-9 {
        return Err(ClusterError::BadPrior(prior.to_vec()));
    }
    Ok(prior.iter().map(|&p| p + alpha * (1.0 - p)).collect())
}

pub fn task_threshold(task: &str, prior: &[f64], alpha: f64) -> Result<Threshold, ClusterError> {
    Ok(Threshold { attribute: task.to_string(), alpha, values: leading_threshold(prior, alpha)? })
}

/// `0, step, 2·step, ..., 1`.
pub fn alpha_grid(step: f64) -> Result<Vec<f64>, ClusterError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(ClusterError::BadAlpha(step));
    }
    let n = (1.0 / step).round() as usize;
    if ((n as f64) * step - 1.0).abs() > 1e-9 {
        return Err(ClusterError::BadAlpha(step));
    }
    Ok((0..=n).map(|i| if i == n { 1.0 } else { i as f64 * step }).collect())
}

/// One cluster of playlists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub cluster_id: usize,
    pub members: Vec<String>,
    pub owners: Vec<String>,
    pub owner_diversity: f64,
    /// Per task: share of each class among members with a known label.
    pub distributions: BTreeMap<String, Vec<f64>>,
    /// Per task: number of members with a known label.
    pub labeled: BTreeMap<String, usize>,
    /// Per task: one flag per swept α.
    pub leading: BTreeMap<String, Vec<bool>>,
}

impl ClusterReport {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Groups playlists by cluster, in dataset playlist order.
pub fn build_clusters(
    dataset: &FeatureDataset,
    assignments: &[usize],
    tasks: &[AttributeTask],
) -> Result<Vec<ClusterReport>, ClusterError> {
    let rows: Vec<(&str, &str, &BTreeMap<String, String>)> = dataset
        .users
        .iter()
        .flat_map(|u| u.playlists.iter().map(move |p| (p.playlist_id.as_str(), u.user_id.as_str(), &u.attributes)))
        .collect();
    if rows.len() != assignments.len() {
        return Err(ClusterError::Ragged);
    }
    let k = assignments.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &a) in assignments.iter().enumerate() {
        members[a].push(i);
    }
    let clusters = members
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(cluster_id, idx)| {
            let mut owner_counts: BTreeMap<&str, u64> = BTreeMap::new();
            for &i in &idx {
                *owner_counts.entry(rows[i].1).or_default() += 1;
            }
            let counts: Vec<u64> = owner_counts.values().copied().collect();
            let mut distributions = BTreeMap::new();
            let mut labeled = BTreeMap::new();
            for task in tasks {
                let mut c = vec![0usize; task.n_classes()];
                for &i in &idx {
                    if let Some(y) = rows[i].2.get(&task.name).and_then(|l| task.encode(l)) {
                        c[y] += 1;
                    }
                }
                let n: usize = c.iter().sum();
                let dist = if n == 0 { vec![0.0; c.len()] } else { c.iter().map(|&v| v as f64 / n as f64).collect() };
                distributions.insert(task.name.clone(), dist);
                labeled.insert(task.name.clone(), n);
            }
            ClusterReport {
                cluster_id,
                members: idx.iter().map(|&i| rows[i].0.to_string()).collect(),
                owners: idx.iter().map(|&i| rows[i].1.to_string()).collect(),
                owner_diversity: simpson_diversity(&counts).value,
                distributions,
                labeled,
                leading: BTreeMap::new(),
            }
        })
        .collect();
    Ok(clusters)
}

/// Keeps clusters whose owner diversity is at least `min_diversity`, then
/// those with at least `min_size` playlists.
pub fn filter_clusters(clusters: Vec<ClusterReport>, min_diversity: f64, min_size: usize) -> Vec<ClusterReport> {
    clusters
        .into_iter()
        .filter(|c| c.owner_diversity >= min_diversity)
        .filter(|c| c.size() >= min_size)
        .collect()
}

/// Class shares over labeled playlists (or users) in the dataset.
pub fn class_prior(dataset: &FeatureDataset, task: &AttributeTask, level: PriorLevel) -> Result<Vec<f64>, ClusterError> {
    let mut c = vec![0usize; task.n_classes()];
    for (u, y) in dataset.labeled(task) {
        c[y] += match level {
            PriorLevel::Playlist => u.playlists.len(),
            PriorLevel::User => 1,
        };
    }
    let n: usize = c.iter().sum();
    if n == 0 {
        return Err(ClusterError::NoLabels(task.name.clone()));
    }
    Ok(c.iter().map(|&v| v as f64 / n as f64).collect())
}

/// Whether some class share strictly exceeds its threshold.
pub fn is_leading(distribution: &[f64], threshold: &[f64]) -> bool {
    distribution.iter().zip(threshold).any(|(q, t)| q > t)
}

/// Ids of the clusters leading toward some class of `task` at `alpha`.
/// Clusters without labeled members are ignored.
pub fn detect_leading(
    clusters: &[ClusterReport],
    task: &AttributeTask,
    prior: &[f64],
    alpha: f64,
) -> Result<Vec<usize>, ClusterError> {
    let th = leading_threshold(prior, alpha)?;
    Ok(clusters
        .iter()
        .filter(|c| c.labeled.get(&task.name).copied().unwrap_or(0) > 0)
        .filter(|c| c.distributions.get(&task.name).is_some_and(|d| is_leading(d, &th)))
        .map(|c| c.cluster_id)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub leading: Vec<usize>,
    /// Clusters with at least one labeled member.
    pub eligible: usize,
    /// `leading / eligible` as a percentage; 0 when nothing is eligible.
    pub percentage: f64,
}

pub fn sweep_alpha(
    clusters: &[ClusterReport],
    task: &AttributeTask,
    prior: &[f64],
    alphas: &[f64],
) -> Result<Vec<SweepPoint>, ClusterError> {
    let eligible = clusters.iter().filter(|c| c.labeled.get(&task.name).copied().unwrap_or(0) > 0).count();
    alphas
        .iter()
        .map(|&alpha| {
            let leading = detect_leading(clusters, task, prior, alpha)?;
            let percentage = if eligible == 0 { 0.0 } else { 100.0 * leading.len() as f64 / eligible as f64 };
            Ok(SweepPoint { alpha, leading, eligible, percentage })
        })
        .collect()
}

/// Stores the sweep outcome on each cluster as per-α flags.
pub fn mark_leading(clusters: &mut [ClusterReport], task: &str, sweep: &[SweepPoint]) {
    for c in clusters.iter_mut() {
        let flags = sweep.iter().map(|p| p.leading.contains(&c.cluster_id)).collect();
        c.leading.insert(task.to_string(), flags);
    }
}

/// Rows α, one percentage column per task.
pub fn write_sweep_csv(path: &Path, sweeps: &BTreeMap<String, Vec<SweepPoint>>) -> Result<(), ClusterError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ClusterError::Io(e.to_string()))?;
    let mut header = vec!["alpha".to_string()];
    header.extend(sweeps.keys().cloned());
    w.write_record(&header).map_err(|e| ClusterError::Io(e.to_string()))?;
    let n = sweeps.values().map(|s| s.len()).max().unwrap_or(0);
    for i in 0..n {
        let alpha = sweeps.values().find_map(|s| s.get(i)).map(|p| p.alpha).unwrap_or(0.0);
        let mut row = vec![format!("{alpha:.2}")];
        for s in sweeps.values() {
            row.push(s.get(i).map(|p| format!("{:.4}", p.percentage)).unwrap_or_default());
        }
        w.write_record(&row).map_err(|e| ClusterError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| ClusterError::Io(e.to_string()))?;
    Ok(())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), ClusterError> {
    let mut f = std::fs::File::create(path).map_err(|e| ClusterError::Io(e.to_string()))?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| ClusterError::Io(e.to_string()))?;
    f.write_all(b"\n").map_err(|e| ClusterError::Io(e.to_string()))
}
