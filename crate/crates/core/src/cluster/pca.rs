use log::warn;
use serde::{Deserialize, Serialize};

use super::linalg::symmetric_eigen;
use super::ClusterError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcaOptions<T> {
    /// Smallest cumulative explained-variance share to retain.
    pub variance_target: T,
    /// z-score columns (on the data itself) before decomposition.
    pub standardize: bool,
}

impl<T: Scalar> Default for PcaOptions<T> {
    fn default() -> Self {
        PcaOptions { variance_target: T::lit(0.8), standardize: true }
    }
}

/// A fitted projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca<T> {
    /// Input columns kept after dropping constant ones.
    pub kept_columns: Vec<usize>,
    pub dropped_columns: Vec<usize>,
    pub center: Vec<T>,
    pub scale: Vec<T>,
    /// Retained components, one unit vector per row over the kept columns.
    pub components: Vec<Vec<T>>,
    /// Every eigenvalue of the covariance, descending.
    pub eigenvalues: Vec<T>,
    /// Explained-variance share of every eigenvalue.
    pub explained_ratio: Vec<T>,
}

impl<T: Scalar> Pca<T> {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn explained_variance(&self) -> T {
        self.explained_ratio[..self.n_components()].iter().copied().sum()
    }

    fn prepared(&self, row: &[T]) -> Vec<T> {
        self.kept_columns
            .iter()
            .enumerate()
            .map(|(k, &c)| (row[c] - self.center[k]) / self.scale[k])
            .collect()
    }

    pub fn transform(&self, row: &[T]) -> Vec<T> {
        let z = self.prepared(row);
        self.components
            .iter()
            .map(|comp| comp.iter().zip(&z).map(|(&w, &x)| w * x).sum())
            .collect()
    }

    /// Back-projects into the (kept, centred and scaled) input space.
    pub fn inverse_transform_prepared(&self, projected: &[T]) -> Vec<T> {
        let d = self.kept_columns.len();
        let mut out = vec![T::zero(); d];
        for (comp, &s) in self.components.iter().zip(projected) {
            for (o, &w) in out.iter_mut().zip(comp) {
                *o += w * s;
            }
        }
        out
    }
}

/// Projects `x` onto the fewest principal components whose cumulative
/// explained variance reaches the target. Component signs are fixed so the
/// largest-magnitude loading is positive.
pub fn pca_reduce<T: Scalar>(
    x: &[Vec<T>],
    options: &PcaOptions<T>,
) -> Result<(Vec<Vec<T>>, Pca<T>), ClusterError> {
    let n = x.len();
    if n < 2 {
        return Err(ClusterError::TooFewRows { rows: n, needed: 2 });
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(ClusterError::Ragged);
    }
    let nf = T::from_usize_lossy(n);
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut center = Vec::new();
    let mut scale = Vec::new();
    for c in 0..d {
        let first = x[0][c];
        if x.iter().all(|r| r[c] == first) {
            dropped.push(c);
            continue;
        }
        let m = x.iter().map(|r| r[c]).sum::<T>() / nf;
        let var = x.iter().map(|r| (r[c] - m) * (r[c] - m)).sum::<T>() / nf;
        kept.push(c);
        center.push(m);
        scale.push(if options.standardize { var.sqrt() } else { T::one() });
    }
    if !dropped.is_empty() {
        warn!("PCA: dropping {} zero-variance column(s)", dropped.len());
    }
    if kept.is_empty() {
        return Err(ClusterError::Degenerate("every column is constant".into()));
    }
    let z: Vec<Vec<T>> = x
        .iter()
        .map(|r| kept.iter().enumerate().map(|(k, &c)| (r[c] - center[k]) / scale[k]).collect())
        .collect();
    let p = kept.len();
    let mut cov = vec![vec![T::zero(); p]; p];
    for row in &z {
        for i in 0..p {
            let ri = row[i];
            for j in i..p {
                cov[i][j] += ri * row[j];
            }
        }
    }
    let denom = T::from_usize_lossy(n - 1);
    for i in 0..p {
        for j in i..p {
            cov[i][j] /= denom;
            cov[j][i] = cov[i][j];
        }
    }
    let (values, mut vectors) = symmetric_eigen(cov);
    let values: Vec<T> = values.into_iter().map(|v| v.max(T::zero())).collect();
    let total: T = values.iter().copied().sum();
    let explained: Vec<T> = values.iter().map(|&v| v / total).collect();
    let target = options.variance_target - T::lit(1e-12);
    let mut k = 0;
    let mut cum = T::zero();
    while k < p {
        cum += explained[k];
        k += 1;
        if cum >= target {
            break;
        }
    }
    for vec in vectors.iter_mut() {
        let lead = (0..p)
            .max_by(|&a, &b| vec[a].abs().partial_cmp(&vec[b].abs()).unwrap_or(std::cmp::Ordering::Equal).then(b.cmp(&a)))
            .unwrap_or(0);
        if vec[lead] < T::zero() {
            for w in vec.iter_mut() {
                *w = -*w;
            }
        }
    }
    vectors.truncate(k);
    let pca = Pca {
        kept_columns: kept,
        dropped_columns: dropped,
        center,
        scale,
        components: vectors,
        eigenvalues: values,
        explained_ratio: explained,
    };
    let projected = x.iter().map(|r| pca.transform(r)).collect();
    Ok((projected, pca))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn points_on_a_line_need_one_component() {
        let x: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let t = i as f64 * 0.37 - 2.0;
                vec![t, 2.0 * t + 1.0, -t, 0.5 * t, 3.0 * t - 4.0]
            })
            .collect();
        let (proj, pca) = pca_reduce(&x, &PcaOptions::default()).unwrap();
        assert_eq!(pca.n_components(), 1);
        assert!((pca.explained_variance() - 1.0).abs() < 1e-12);
        assert_eq!(proj[0].len(), 1);
    }

    #[test]
    fn isotropic_plane_needs_both_components() {
        // Square grid: equal variances, zero covariance.
        let x: Vec<Vec<f64>> = (0..100).map(|i| vec![(i % 10) as f64, (i / 10) as f64]).collect();
        let (_, pca) = pca_reduce(&x, &PcaOptions::default()).unwrap();
        assert_eq!(pca.n_components(), 2);
        assert!((pca.explained_ratio[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn anisotropic_gaussian_first_share() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Normal::new(0.0, 3.0).unwrap();
        let b = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<Vec<f64>> = (0..20_000).map(|_| vec![a.sample(&mut rng), b.sample(&mut rng)]).collect();
        let opts = PcaOptions { variance_target: 0.8, standardize: false };
        let (_, pca) = pca_reduce(&x, &opts).unwrap();
        assert!((pca.explained_ratio[0] - 0.9).abs() < 0.01, "{}", pca.explained_ratio[0]);
        assert_eq!(pca.n_components(), 1);
        assert!(pca.components[0][0] > 0.0);
        // Standardizing erases the anisotropy.
        let (_, pca) = pca_reduce(&x, &PcaOptions::default()).unwrap();
        assert!((pca.explained_ratio[0] - 0.5).abs() < 0.02);
    }

    #[test]
    fn constant_columns_are_dropped() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 7.0, (i * i) as f64]).collect();
        let (_, pca) = pca_reduce(&x, &PcaOptions::default()).unwrap();
        assert_eq!(pca.dropped_columns, vec![1]);
        let flat = vec![vec![1.0, 1.0]; 4];
        assert!(matches!(pca_reduce(&flat, &PcaOptions::default()), Err(ClusterError::Degenerate(_))));
    }

    #[test]
    fn full_rank_reconstruction_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nrm = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<Vec<f64>> = (0..50)
            .map(|_| {
                let u: f64 = nrm.sample(&mut rng);
                vec![u, u + 0.3 * nrm.sample(&mut rng), nrm.sample(&mut rng), 2.0 * nrm.sample(&mut rng)]
            })
            .collect();
        let opts = PcaOptions { variance_target: 1.0, standardize: true };
        let (proj, pca) = pca_reduce(&x, &opts).unwrap();
        assert_eq!(pca.n_components(), 4);
        for (row, p) in x.iter().zip(&proj) {
            let back = pca.inverse_transform_prepared(p);
            for (k, &c) in pca.kept_columns.iter().enumerate() {
                let z = (row[c] - pca.center[k]) / pca.scale[k];
                assert!((back[k] - z).abs() < 1e-9);
            }
        }
    }
}
