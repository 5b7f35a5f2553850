use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Column z-scoring with population statistics. Constant columns map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<T> {
    pub mean: Vec<T>,
    pub scale: Vec<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let n = T::from_usize_lossy(rows.len().max(1));
        let mut mean = vec![T::zero(); d];
        for r in rows {
            for (m, &x) in mean.iter_mut().zip(r.as_ref()) {
                *m += x;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![T::zero(); d];
        for r in rows {
            for ((v, &x), &m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > T::zero() {
                    s
                } else {
                    T::one()
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, row: &[T]) -> Vec<T> {
        row.iter().zip(&self.mean).zip(&self.scale).map(|((&x, &m), &s)| (x - m) / s).collect()
    }

    pub fn transform_all<R: AsRef<[T]>>(&self, rows: &[R]) -> Vec<Vec<T>> {
        rows.iter().map(|r| self.transform(r.as_ref())).collect()
    }
}
