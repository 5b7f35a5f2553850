use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::domain::{AttributeTask, FeatureDataset};

pub const SPLIT_RATIOS: [f64; 3] = [0.7, 0.1, 0.2];

/// User-disjoint train / validation / test partition for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub task: String,
    pub seed: u64,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl SplitPlan {
    pub fn partitions(&self) -> [&[String]; 3] {
        [&self.train, &self.validation, &self.test]
    }
}

/// Largest-remainder rounding of `target`; ties go to the lower index.
fn hamilton(target: &[f64; 3], total: usize) -> [usize; 3] {
    let mut out = target.map(|t| t.floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (target[b] - target[b].floor()).total_cmp(&(target[a] - target[a].floor())).then(a.cmp(&b)));
    let mut left = total - out.iter().sum::<usize>();
    for &p in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[p] += 1;
        left -= 1;
    }
    out
}

/// Integer counts per (class, partition). Each class is rounded by largest
/// remainder, then single units are moved between partitions until every
/// partition total matches the rounded global target. Every count stays the
/// floor or ceiling of its fractional target.
fn allocate(class_sizes: &[usize], ratios: &[f64; 3]) -> Vec<[usize; 3]> {
    let n: usize = class_sizes.iter().sum();
    let desired = hamilton(&ratios.map(|r| r * n as f64), n);
    let targets: Vec<[f64; 3]> = class_sizes.iter().map(|&nc| ratios.map(|r| r * nc as f64)).collect();
    let mut alloc: Vec<[usize; 3]> = targets.iter().zip(class_sizes).map(|(t, &nc)| hamilton(t, nc)).collect();
    loop {
        let totals: Vec<usize> = (0..3).map(|p| alloc.iter().map(|a| a[p]).sum()).collect();
        let (Some(over), Some(under)) =
            ((0..3).find(|&p| totals[p] > desired[p]), (0..3).find(|&p| totals[p] < desired[p]))
        else {
            break;
        };
        // Cheapest move: the class whose unit in `over` is most surplus and
        // whose `under` cell is most short.
        let best = (0..alloc.len())
            .filter(|&c| {
                let t = &targets[c];
                alloc[c][over] as f64 > t[over] && (alloc[c][under] as f64) < t[under]
            })
            .max_by(|&a, &b| {
                let gain = |c: usize| {
                    (targets[c][under] - alloc[c][under] as f64) - (alloc[c][over] as f64 - targets[c][over])
                };
                gain(a).total_cmp(&gain(b)).then(b.cmp(&a))
            });
        match best {
            Some(c) => {
                alloc[c][over] -= 1;
                alloc[c][under] += 1;
            }
            None => break,
        }
    }
    alloc
}

/// Seeded stratified split over users holding a label for `task`. Users are
/// shuffled within each class and dealt into partitions by per-class quotas.
pub fn split_users(
    users: &[(String, usize)],
    task: &AttributeTask,
    seed: u64,
) -> Result<SplitPlan, EvalError> {
    let k = task.n_classes();
    let mut by_class: Vec<Vec<&str>> = vec![Vec::new(); k];
    let mut sorted: Vec<&(String, usize)> = users.iter().collect();
    sorted.sort();
    for (id, y) in sorted {
        by_class[*y].push(id.as_str());
    }
    let present: Vec<usize> = (0..k).filter(|&c| !by_class[c].is_empty()).collect();
    if let Some(&c) = present.iter().find(|&&c| by_class[c].len() < 3) {
        return Err(EvalError::TooFewUsers {
            task: task.name.clone(),
            class: task.classes[c].clone(),
            count: by_class[c].len(),
        });
    }
    if present.len() < 2 {
        return Err(EvalError::Degenerate(format!("task {:?} has fewer than 2 populated classes", task.name)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for ids in by_class.iter_mut() {
        ids.shuffle(&mut rng);
    }
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let alloc = allocate(&sizes, &SPLIT_RATIOS);
    let mut parts: [Vec<String>; 3] = Default::default();
    for (ids, a) in by_class.iter().zip(&alloc) {
        let mut it = ids.iter();
        for p in 0..3 {
            parts[p].extend(it.by_ref().take(a[p]).map(|s| s.to_string()));
        }
    }
    for p in parts.iter_mut() {
        p.shuffle(&mut rng);
    }
    let [train, validation, test] = parts;
    Ok(SplitPlan { task: task.name.clone(), seed, train, validation, test })
}

pub fn split_dataset(dataset: &FeatureDataset, task: &AttributeTask, seed: u64) -> Result<SplitPlan, EvalError> {
    let users: Vec<(String, usize)> = dataset.labeled(task).into_iter().map(|(u, y)| (u.user_id.clone(), y)).collect();
    split_users(&users, task, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn users(counts: &[usize]) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for i in 0..n {
                out.push((format!("u{c}_{i}"), c));
            }
        }
        out
    }

    #[test]
    fn balanced_hundred() {
        let task = AttributeTask::custom("t", &["a", "b"]).unwrap();
        let plan = split_users(&users(&[50, 50]), &task, 3).unwrap();
        assert_eq!([plan.train.len(), plan.validation.len(), plan.test.len()], [70, 10, 20]);
        let all: BTreeSet<&String> = plan.partitions().iter().flat_map(|p| p.iter()).collect();
        assert_eq!(all.len(), 100);
        assert_eq!(plan, split_users(&users(&[50, 50]), &task, 3).unwrap());
        assert_ne!(plan, split_users(&users(&[50, 50]), &task, 4).unwrap());
    }

    #[test]
    fn allocation_keeps_totals_close() {
        let a = allocate(&[7, 7, 7, 7, 7], &SPLIT_RATIOS);
        let totals: Vec<usize> = (0..3).map(|p| a.iter().map(|r| r[p]).sum()).collect();
        assert_eq!(totals.iter().sum::<usize>(), 35);
        assert!((totals[0] as f64 - 24.5).abs() <= 1.0, "{totals:?}");
        assert!((totals[1] as f64 - 3.5).abs() <= 1.0, "{totals:?}");
    }

    #[test]
    fn too_few_users_in_a_class() {
        let task = AttributeTask::custom("t", &["a", "b"]).unwrap();
        let err = split_users(&users(&[10, 2]), &task, 0).unwrap_err();
        assert!(matches!(err, EvalError::TooFewUsers { ref class, count: 2, .. } if class == "b"));
    }
}
