use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ClusterError;
use crate::scalar::{squared_distance, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub max_iter: usize,
    /// Convergence threshold on total squared centroid shift, relative to the
    /// mean per-column variance of the data.
    pub tol: f64,
    /// Independent restarts; the lowest-inertia run wins.
    pub n_init: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions { max_iter: 300, tol: 1e-4, n_init: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult<T> {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<T>>,
    pub inertia: T,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every assignment step.
    pub objective_history: Vec<T>,
}

pub fn kmeans<T: Scalar>(x: &[Vec<T>], k: usize, seed: u64) -> Result<KMeansResult<T>, ClusterError> {
    kmeans_with(x, k, seed, &KMeansOptions::default())
}

pub fn kmeans_with<T: Scalar>(
    x: &[Vec<T>],
    k: usize,
    seed: u64,
    options: &KMeansOptions,
) -> Result<KMeansResult<T>, ClusterError> {
    validate(x, k)?;
    let mut best: Option<KMeansResult<T>> = None;
    for init in 0..options.n_init.max(1) {
        let run_seed = seed.wrapping_add((init as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let run = lloyd(x, k, run_seed, options);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

fn validate<T: Scalar>(x: &[Vec<T>], k: usize) -> Result<(), ClusterError> {
    if k == 0 {
        return Err(ClusterError::BadK { k, rows: x.len() });
    }
    if x.len() < k {
        return Err(ClusterError::BadK { k, rows: x.len() });
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(ClusterError::Ragged);
    }
    Ok(())
}

fn nearest<T: Scalar>(row: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = 0;
    let mut best_d = T::infinity();
    for (c, cen) in centroids.iter().enumerate() {
        let d = squared_distance(row, cen);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

/// Greedy k-means++ seeding with `2 + ln k` candidates per step.
fn seed_centroids<T: Scalar>(x: &[Vec<T>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let n = x.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = vec![x[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = x.iter().map(|r| squared_distance(r, &centroids[0]).to_f64_lossy()).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let mut best_idx = None;
        let mut best_pot = f64::INFINITY;
        let mut best_dist = Vec::new();
        for _ in 0..trials {
            let idx = if total > 0.0 {
                let target = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut pick = n - 1;
                for (i, &d) in dist.iter().enumerate() {
                    acc += d;
                    if acc > target {
                        pick = i;
                        break;
                    }
                }
                pick
            } else {
                rng.random_range(0..n)
            };
            let cand: Vec<f64> = x
                .iter()
                .zip(&dist)
                .map(|(r, &d)| d.min(squared_distance(r, &x[idx]).to_f64_lossy()))
                .collect();
            let pot: f64 = cand.iter().sum();
            if pot < best_pot {
                best_pot = pot;
                best_idx = Some(idx);
                best_dist = cand;
            }
        }
        centroids.push(x[best_idx.unwrap()].clone());
        dist = best_dist;
    }
    centroids
}

fn lloyd<T: Scalar>(x: &[Vec<T>], k: usize, seed: u64, options: &KMeansOptions) -> KMeansResult<T> {
    let n = x.len();
    let d = x[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(x, k, &mut rng);
    let nf = T::from_usize_lossy(n);
    let mean_var: T = if d == 0 {
        T::zero()
    } else {
        (0..d)
            .map(|c| {
                let m = x.iter().map(|r| r[c]).sum::<T>() / nf;
                x.iter().map(|r| (r[c] - m) * (r[c] - m)).sum::<T>() / nf
            })
            .sum::<T>()
            / T::from_usize_lossy(d)
    };
    let tol = T::lit(options.tol) * mean_var;
    let mut assignments = vec![0usize; n];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..options.max_iter {
        iterations += 1;
        let assigned: Vec<(usize, T)> = x.iter().map(|r| nearest(r, &centroids)).collect();
        let mut inertia = T::zero();
        for (a, (c, dist)) in assignments.iter_mut().zip(&assigned) {
            *a = *c;
            inertia += *dist;
        }
        history.push(inertia);
        let mut sums = vec![vec![T::zero(); d]; k];
        let mut counts = vec![0usize; k];
        for (r, &a) in x.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, &v) in sums[a].iter_mut().zip(r) {
                *s += v;
            }
        }
        let mut shift = T::zero();
        let mut reseeded = false;
        for c in 0..k {
            let new = if counts[c] == 0 {
                // Move the empty centroid onto the point worst served now.
                reseeded = true;
                let far = (0..n)
                    .max_by(|&i, &j| assigned[i].1.partial_cmp(&assigned[j].1).unwrap_or(std::cmp::Ordering::Equal).then(j.cmp(&i)))
                    .unwrap();
                x[far].clone()
            } else {
                let cnt = T::from_usize_lossy(counts[c]);
                sums[c].iter().map(|&s| s / cnt).collect()
            };
            shift += squared_distance(&new, &centroids[c]);
            centroids[c] = new;
        }
        if !reseeded && shift <= tol {
            converged = true;
            break;
        }
    }
    let assigned: Vec<(usize, T)> = x.iter().map(|r| nearest(r, &centroids)).collect();
    let inertia: T = assigned.iter().map(|a| a.1).sum();
    for (a, (c, _)) in assignments.iter_mut().zip(&assigned) {
        *a = *c;
    }
    history.push(inertia);
    KMeansResult { assignments, centroids, inertia, iterations, converged, objective_history: history }
}

/// Mean silhouette coefficient. Members of singleton clusters score 0.
pub fn silhouette<T: Scalar>(x: &[Vec<T>], labels: &[usize]) -> Result<T, ClusterError> {
    if x.len() != labels.len() {
        return Err(ClusterError::Ragged);
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let populated = sizes.iter().filter(|&&s| s > 0).count();
    if populated < 2 {
        return Err(ClusterError::Degenerate("silhouette needs at least 2 clusters".into()));
    }
    let scores: Vec<T> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] == 1 {
                return T::zero();
            }
            let mut sums = vec![T::zero(); k];
            for (j, r) in x.iter().enumerate() {
                if j != i {
                    sums[labels[j]] += squared_distance(&x[i], r).sqrt();
                }
            }
            let a = sums[own] / T::from_usize_lossy(sizes[own] - 1);
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / T::from_usize_lossy(sizes[c]))
                .fold(T::infinity(), T::min);
            let m = a.max(b);
            if m > T::zero() {
                (b - a) / m
            } else {
                T::zero()
            }
        })
        .collect();
    Ok(scores.iter().copied().sum::<T>() / T::from_usize_lossy(x.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KRange {
    pub start: usize,
    pub end: usize,
    pub step: usize,
}

impl Default for KRange {
    fn default() -> Self {
        KRange { start: 50, end: 200, step: 5 }
    }
}

impl KRange {
    pub fn values(&self) -> Vec<usize> {
        (self.start..=self.end).step_by(self.step.max(1)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection<T> {
    pub best_k: usize,
    pub scores: Vec<(usize, T)>,
    pub best: KMeansResult<T>,
    /// Set when the requested range had to be shrunk to fit the data.
    pub range_clipped: bool,
}

/// Picks the k with the highest mean silhouette. Ties go to the smaller k.
/// Candidates above `rows - 1` are discarded; if none remain the range is
/// shrunk to `2..=rows-1`.
pub fn select_k<T: Scalar>(
    x: &[Vec<T>],
    range: KRange,
    seed: u64,
    options: &KMeansOptions,
) -> Result<KSelection<T>, ClusterError> {
    let n = x.len();
    if n < 3 {
        return Err(ClusterError::TooFewRows { rows: n, needed: 3 });
    }
    if x.iter().all(|r| r == &x[0]) {
        return Err(ClusterError::Degenerate("all rows are identical".into()));
    }
    let mut ks: Vec<usize> = range.values().into_iter().filter(|&k| k >= 2 && k < n).collect();
    let clipped = ks.len() != range.values().len();
    if ks.is_empty() {
        ks = (2..n).collect();
    }
    if clipped {
        log::warn!("k range {:?} clipped to {} candidate(s) for {} rows", range, ks.len(), n);
    }
    let runs: Vec<(usize, KMeansResult<T>, T)> = ks
        .par_iter()
        .map(|&k| {
            let run = kmeans_with(x, k, seed, options)?;
            let s = silhouette(x, &run.assignments).unwrap_or(T::neg_infinity());
            Ok((k, run, s))
        })
        .collect::<Result<_, ClusterError>>()?;
    let scores = runs.iter().map(|(k, _, s)| (*k, *s)).collect();
    let mut best_i = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.2 > runs[best_i].2 {
            best_i = i;
        }
    }
    let (best_k, best, _) = runs.into_iter().nth(best_i).unwrap();
    Ok(KSelection { best_k, scores, best, range_clipped: clipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(centers: &[(f64, f64)], per: usize, sd: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nrm = Normal::new(0.0, sd).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..per {
                x.push(vec![cx + nrm.sample(&mut rng), cy + nrm.sample(&mut rng)]);
                y.push(c);
            }
        }
        (x, y)
    }

    #[test]
    fn recovers_separated_blobs() {
        let (x, y) = blobs(&[(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)], 40, 0.5, 1);
        let r = kmeans(&x, 3, 7).unwrap();
        for c in 0..3 {
            let labels: std::collections::BTreeSet<usize> =
                (0..x.len()).filter(|&i| y[i] == c).map(|i| r.assignments[i]).collect();
            assert_eq!(labels.len(), 1);
        }
        assert!(r.converged);
        for w in r.objective_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        let s = silhouette(&x, &r.assignments).unwrap();
        assert!(s > 0.8);
    }

    #[test]
    fn objective_never_increases_from_any_seed() {
        let (x, _) = blobs(&[(0.0, 0.0), (3.0, 1.0), (1.0, 4.0), (5.0, 5.0)], 30, 1.5, 2);
        for seed in 0..20 {
            let r = kmeans(&x, 6, seed).unwrap();
            for w in r.objective_history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "seed {seed}");
            }
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let (x, _) = blobs(&[(0.0, 0.0), (4.0, 4.0)], 25, 1.0, 3);
        assert_eq!(kmeans(&x, 4, 9).unwrap(), kmeans(&x, 4, 9).unwrap());
    }

    #[test]
    fn k_equals_rows_gives_zero_silhouette() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let r = kmeans(&x, 6, 0).unwrap();
        assert_eq!(r.inertia, 0.0);
        assert_eq!(silhouette(&x, &r.assignments).unwrap(), 0.0);
    }

    #[test]
    fn bad_k_and_degenerate_inputs() {
        let x = vec![vec![1.0_f64], vec![2.0]];
        assert!(matches!(kmeans(&x, 3, 0), Err(ClusterError::BadK { .. })));
        assert!(matches!(kmeans(&x, 0, 0), Err(ClusterError::BadK { .. })));
        let same = vec![vec![1.0_f64, 1.0]; 10];
        assert!(matches!(select_k(&same, KRange::default(), 0, &KMeansOptions::default()), Err(ClusterError::Degenerate(_))));
        assert!(matches!(silhouette(&same, &[0; 10]), Err(ClusterError::Degenerate(_))));
    }

    #[test]
    fn select_k_finds_blob_count_and_prefers_smaller_on_ties() {
        let centers: Vec<(f64, f64)> = (0..4).map(|i| ((i % 2) as f64 * 20.0, (i / 2) as f64 * 20.0)).collect();
        let (x, _) = blobs(&centers, 20, 0.3, 4);
        let sel = select_k(&x, KRange { start: 2, end: 8, step: 1 }, 0, &KMeansOptions::default()).unwrap();
        assert_eq!(sel.best_k, 4);
        assert_eq!(sel.scores.len(), 7);
        let small: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let sel = select_k(&small, KRange::default(), 0, &KMeansOptions::default()).unwrap();
        assert!(sel.range_clipped && sel.best_k < 10);
    }
}
