use serde::{Deserialize, Serialize};

use super::{check_training, LearnError};
use crate::scalar::{squared_distance, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnnWeights {
    Uniform,
    Distance,
}

/// Brute-force Euclidean nearest neighbours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn<T> {
    pub k: usize,
    pub weights: KnnWeights,
    pub n_classes: usize,
    pub x: Vec<Vec<T>>,
    pub y: Vec<usize>,
}

impl<T: Scalar> Knn<T> {
    pub fn fit(x: &[Vec<T>], y: &[usize], n_classes: usize, k: usize, weights: KnnWeights) -> Result<Self, LearnError> {
        check_training(x, y, n_classes)?;
        if k == 0 {
            return Err(LearnError::Config("k must be positive".into()));
        }
        if k > x.len() {
            log::warn!("knn: k = {k} exceeds {} training rows, using all", x.len());
        }
        Ok(Knn { k: k.min(x.len()), weights, n_classes, x: x.to_vec(), y: y.to_vec() })
    }

    /// Neighbour class frequencies, inverse-distance weighted when asked.
    /// Exact matches take all the weight under distance weighting.
    pub fn predict_proba(&self, row: &[T]) -> Vec<T> {
        let mut d: Vec<(T, usize)> = self.x.iter().enumerate().map(|(i, r)| (squared_distance(row, r), i)).collect();
        let k = self.k;
        d.select_nth_unstable_by(k - 1, |a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
        let near = &mut d[..k];
        near.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
        let mut p = vec![T::zero(); self.n_classes];
        match self.weights {
            KnnWeights::Uniform => {
                for &(_, i) in near.iter() {
                    p[self.y[i]] += T::one();
                }
            }
            KnnWeights::Distance => {
                if near.iter().any(|n| n.0 == T::zero()) {
                    for &(_, i) in near.iter().filter(|n| n.0 == T::zero()) {
                        p[self.y[i]] += T::one();
                    }
                } else {
                    for &(dist, i) in near.iter() {
                        p[self.y[i]] += T::one() / dist.sqrt();
                    }
                }
            }
        }
        let total: T = p.iter().copied().sum();
        p.iter_mut().for_each(|v| *v /= total);
        p
    }
}
