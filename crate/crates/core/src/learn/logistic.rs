//! Multinomial logistic regression with an L2 penalty, fitted by L-BFGS.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{balanced_weights, check_training, LearnError};
use crate::scalar::{softmax, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    /// Inverse regularization strength.
    pub c: f64,
    pub fit_intercept: bool,
    pub balanced: bool,
    pub max_iter: usize,
    /// Convergence threshold on the largest gradient entry.
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig { c: 1.0, fit_intercept: true, balanced: false, max_iter: 200, tol: 1e-6 }
    }
}

/// `weights` is `n_classes × n_features`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression<T> {
    pub n_features: usize,
    pub n_classes: usize,
    pub weights: Vec<T>,
    pub intercept: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> LogisticRegression<T> {
    pub fn zeros(n_features: usize, n_classes: usize) -> Self {
        LogisticRegression {
            n_features,
            n_classes,
            weights: vec![T::zero(); n_features * n_classes],
            intercept: vec![T::zero(); n_classes],
            iterations: 0,
            converged: true,
        }
    }

    pub fn logits(&self, row: &[T]) -> Vec<T> {
        (0..self.n_classes)
            .map(|c| {
                let w = &self.weights[c * self.n_features..(c + 1) * self.n_features];
                w.iter().zip(row).fold(self.intercept[c], |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }

    pub fn predict_proba(&self, row: &[T]) -> Vec<T> {
        softmax(&self.logits(row))
    }

    pub fn fit(x: &[Vec<T>], y: &[usize], n_classes: usize, config: &LogisticConfig) -> Result<Self, LearnError> {
        let d = check_training(x, y, n_classes)?;
        let sw: Vec<T> = if config.balanced {
            let w = balanced_weights(y, n_classes);
            y.iter().map(|&c| T::lit(w[c])).collect()
        } else {
            vec![T::one(); y.len()]
        };
        let total: T = sw.iter().copied().sum();
        let reg = T::one() / (T::lit(config.c) * total);
        let nw = d * n_classes;
        let np = if config.fit_intercept { nw + n_classes } else { nw };
        let objective = |p: &[T]| -> (T, Vec<T>) {
            let mut g = vec![T::zero(); np];
            let mut f = T::zero();
            for (i, row) in x.iter().enumerate() {
                let logits: Vec<T> = (0..n_classes)
                    .map(|c| {
                        let w = &p[c * d..(c + 1) * d];
                        let b = if config.fit_intercept { p[nw + c] } else { T::zero() };
                        w.iter().zip(row).fold(b, |acc, (&a, &v)| acc + a * v)
                    })
                    .collect();
                let prob = softmax(&logits);
                f -= sw[i] * prob[y[i]].max(T::min_positive_value()).ln();
                for c in 0..n_classes {
                    let mut r = prob[c];
                    if c == y[i] {
                        r -= T::one();
                    }
                    let r = r * sw[i];
                    for (gj, &v) in g[c * d..(c + 1) * d].iter_mut().zip(row) {
                        *gj += r * v;
                    }
                    if config.fit_intercept {
                        g[nw + c] += r;
                    }
                }
            }
            let inv = T::one() / total;
            f *= inv;
            for gi in g.iter_mut() {
                *gi *= inv;
            }
            let half = T::lit(0.5);
            for j in 0..nw {
                f += half * reg * p[j] * p[j];
                g[j] += reg * p[j];
            }
            (f, g)
        };
        let (p, iterations, converged) = lbfgs(vec![T::zero(); np], objective, config.max_iter, T::lit(config.tol));
        let intercept = if config.fit_intercept { p[nw..].to_vec() } else { vec![T::zero(); n_classes] };
        Ok(LogisticRegression { n_features: d, n_classes, weights: p[..nw].to_vec(), intercept, iterations, converged })
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Limited-memory BFGS with a backtracking Armijo line search.
pub fn lbfgs<T, F>(mut x: Vec<T>, mut f: F, max_iter: usize, tol: T) -> (Vec<T>, usize, bool)
where
    T: Scalar,
    F: FnMut(&[T]) -> (T, Vec<T>),
{
    const MEMORY: usize = 10;
    let (mut fx, mut g) = f(&x);
    let mut hist: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::new();
    let gmax = |g: &[T]| g.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    for it in 0..max_iter {
        if gmax(&g) <= tol {
            return (x, it, true);
        }
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = *rho * dot(s, &q);
            for (qi, &yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            for qi in q.iter_mut() {
                *qi *= gamma;
            }
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = *rho * dot(y, &q);
            for (qi, &si) in q.iter_mut().zip(s) {
                *qi += si * (*a - b);
            }
        }
        let mut dir: Vec<T> = q.into_iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= T::zero() {
            hist.clear();
            dir = g.iter().map(|&v| -v).collect();
            slope = dot(&g, &dir);
        }
        let mut step = if hist.is_empty() { T::one() / gmax(&g).max(T::one()) } else { T::one() };
        let c1 = T::lit(1e-4);
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<T> = x.iter().zip(&dir).map(|(&xi, &di)| xi + step * di).collect();
            let (fc, gc) = f(&cand);
            if fc.is_finite() && fc <= fx + c1 * step * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= T::lit(0.5);
        }
        let Some((nx, nf, ng)) = accepted else {
            return (x, it, false);
        };
        let s: Vec<T> = nx.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = ng.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > T::epsilon() * dot(&y, &y) {
            if hist.len() == MEMORY {
                hist.pop_front();
            }
            hist.push_back((s, y, T::one() / sy));
        }
        let improvement = fx - nf;
        x = nx;
        fx = nf;
        g = ng;
        if improvement.abs() <= T::epsilon() * fx.abs().max(T::one()) && gmax(&g) <= tol.sqrt() {
            return (x, it + 1, true);
        }
    }
    let ok = gmax(&g) <= tol;
    (x, max_iter, ok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::argmax;

    #[test]
    fn lbfgs_on_rosenbrock() {
        let f = |p: &[f64]| {
            let (a, b) = (p[0], p[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            (v, g)
        };
        let (x, _, ok) = lbfgs(vec![-1.2, 1.0], f, 500, 1e-8);
        assert!(ok);
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn separable_toy_set_is_fitted_perfectly() {
        let x: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let a = if i < 20 { -2.0 + i as f64 * 0.075 } else { 0.5 + (i - 20) as f64 * 0.075 };
                vec![a, ((i * 7) % 5) as f64]
            })
            .collect();
        let y: Vec<usize> = x.iter().map(|r| usize::from(r[0] > 0.0)).collect();
        let m = LogisticRegression::fit(&x, &y, 2, &LogisticConfig { c: 10.0, ..Default::default() }).unwrap();
        for (r, &t) in x.iter().zip(&y) {
            assert_eq!(argmax(&m.predict_proba(r)), t);
        }
    }

    #[test]
    fn zero_weights_give_uniform_and_hand_softmax() {
        let m = LogisticRegression::<f64>::zeros(3, 4);
        assert_eq!(m.predict_proba(&[1.0, 2.0, 3.0]), vec![0.25; 4]);
        let mut m = LogisticRegression::<f64>::zeros(2, 2);
        m.weights = vec![0.1, -0.2, 0.0, 0.3];
        m.intercept = vec![0.05, 0.0];
        // logits: [0.1 - 0.4 + 0.05, 0.6] = [-0.25, 0.6]
        let p = m.predict_proba(&[1.0, 2.0]);
        let e = (-0.85f64).exp();
        assert!((p[0] - e / (1.0 + e)).abs() < 1e-15);
    }

    #[test]
    fn stronger_penalty_shrinks_weights() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos()]).collect();
        let y: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let norm = |c: f64| {
            let m = LogisticRegression::fit(&x, &y, 3, &LogisticConfig { c, ..Default::default() }).unwrap();
            m.weights.iter().map(|w| w * w).sum::<f64>()
        };
        assert!(norm(0.01) < norm(10.0));
    }
}
