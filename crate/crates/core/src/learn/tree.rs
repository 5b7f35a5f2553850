//! CART classification trees and bagged forests.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{balanced_weights, check_training, LearnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Gini,
    Entropy,
}

impl Criterion {
    fn impurity(self, counts: &[f64], total: f64) -> f64 {
        if total <= 0.0 {
            return 0.0;
        }
        match self {
            Criterion::Gini => 1.0 - counts.iter().map(|&c| (c / total) * (c / total)).sum::<f64>(),
            Criterion::Entropy => -counts
                .iter()
                .filter(|&&c| c > 0.0)
                .map(|&c| {
                    let p = c / total;
                    p * p.log2()
                })
                .sum::<f64>(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub criterion: Criterion,
    pub max_depth: Option<usize>,
    pub balanced: bool,
    /// Features drawn at each split; all when `None`.
    pub max_features: Option<usize>,
    pub min_samples_split: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { criterion: Criterion::Gini, max_depth: None, balanced: false, max_features: None, min_samples_split: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Leaf { distribution: Vec<f64> },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub n_features: usize,
    pub n_classes: usize,
    pub nodes: Vec<Node>,
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    w: &'a [f64],
    n_classes: usize,
    config: TreeConfig,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<f64> {
        let mut c = vec![0.0; self.n_classes];
        for &i in idx {
            c[self.y[i]] += self.w[i];
        }
        c
    }

    fn leaf(&mut self, counts: Vec<f64>) -> usize {
        let total: f64 = counts.iter().sum();
        let distribution = if total > 0.0 {
            counts.iter().map(|&c| c / total).collect()
        } else {
            vec![1.0 / self.n_classes as f64; self.n_classes]
        };
        self.nodes.push(Node::Leaf { distribution });
        self.nodes.len() - 1
    }

    fn best_split(&self, idx: &[usize], parent: &[f64], features: &[usize]) -> Option<(usize, f64)> {
        let total: f64 = parent.iter().sum();
        let parent_imp = self.config.criterion.impurity(parent, total);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut sorted = idx.to_vec();
        for &f in features {
            sorted.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = vec![0.0; self.n_classes];
            let mut lw = 0.0;
            for k in 0..sorted.len() - 1 {
                let i = sorted[k];
                left[self.y[i]] += self.w[i];
                lw += self.w[i];
                let (a, b) = (self.x[i][f], self.x[sorted[k + 1]][f]);
                if a == b {
                    continue;
                }
                let right: Vec<f64> = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
                let rw = total - lw;
                let imp = (lw * self.config.criterion.impurity(&left, lw) + rw * self.config.criterion.impurity(&right, rw)) / total;
                let gain = parent_imp - imp;
                if gain > 1e-12 && best.is_none_or(|(_, _, g)| gain > g) {
                    let mut thr = a + (b - a) / 2.0;
                    if thr >= b {
                        thr = a;
                    }
                    best = Some((f, thr, gain));
                }
            }
        }
        best.map(|(f, t, _)| (f, t))
    }

    fn grow<R: Rng>(&mut self, idx: Vec<usize>, depth: usize, rng: &mut R) -> usize {
        let counts = self.counts(&idx);
        let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
        let depth_hit = self.config.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_hit || idx.len() < self.config.min_samples_split.max(2) {
            return self.leaf(counts);
        }
        let d = self.x[0].len();
        let features: Vec<usize> = match self.config.max_features {
            Some(m) if m < d => {
                let mut f = sample(rng, d, m.max(1)).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        };
        let Some((feature, threshold)) = self.best_split(&idx, &counts, &features) else {
            return self.leaf(counts);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| self.x[i][feature] <= threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Split { feature, threshold, left: 0, right: 0 });
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[at] = Node::Split { feature, threshold, left, right };
        at
    }
}

impl DecisionTree {
    pub fn fit(x: &[Vec<f64>], y: &[usize], n_classes: usize, config: &TreeConfig, seed: u64) -> Result<Self, LearnError> {
        check_training(x, y, n_classes)?;
        let w = if config.balanced {
            let cw = balanced_weights(y, n_classes);
            y.iter().map(|&c| cw[c]).collect()
        } else {
            vec![1.0; y.len()]
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::fit_weighted(x, y, &w, n_classes, config, &mut rng))
    }

    fn fit_weighted<R: Rng>(x: &[Vec<f64>], y: &[usize], w: &[f64], n_classes: usize, config: &TreeConfig, rng: &mut R) -> Self {
        let idx: Vec<usize> = (0..x.len()).filter(|&i| w[i] > 0.0).collect();
        let mut b = Builder { x, y, w, n_classes, config: *config, nodes: Vec::new() };
        b.grow(idx, 0, rng);
        DecisionTree { n_features: x[0].len(), n_classes, nodes: b.nodes }
    }

    pub fn predict_proba(&self, row: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { distribution } => return distribution,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, at: usize) -> usize {
            match &t.nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub tree: TreeConfig,
    pub n_estimators: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { tree: TreeConfig::default(), n_estimators: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub n_classes: usize,
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    /// Bootstrap-resampled trees with `⌊√d⌋` features per split unless
    /// `max_features` is set.
    pub fn fit(x: &[Vec<f64>], y: &[usize], n_classes: usize, config: &ForestConfig, seed: u64) -> Result<Self, LearnError> {
        let d = check_training(x, y, n_classes)?;
        let class_w = if config.tree.balanced { balanced_weights(y, n_classes) } else { vec![1.0; n_classes] };
        let mut tc = config.tree;
        if tc.max_features.is_none() {
            tc.max_features = Some(((d as f64).sqrt() as usize).max(1));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = x.len();
        let trees = (0..config.n_estimators.max(1))
            .map(|_| {
                let mut mult = vec![0.0; n];
                for _ in 0..n {
                    mult[rng.random_range(0..n)] += 1.0;
                }
                let w: Vec<f64> = mult.iter().zip(y).map(|(m, &c)| m * class_w[c]).collect();
                DecisionTree::fit_weighted(x, y, &w, n_classes, &tc, &mut rng)
            })
            .collect();
        Ok(RandomForest { n_classes, trees })
    }

    pub fn predict_proba(&self, row: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.n_classes];
        for t in &self.trees {
            for (a, &b) in p.iter_mut().zip(t.predict_proba(row)) {
                *a += b;
            }
        }
        let k = self.trees.len() as f64;
        p.iter_mut().for_each(|v| *v /= k);
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::argmax;
    use rand_distr::{Distribution, Normal};

    fn accuracy(pred: impl Fn(&[f64]) -> Vec<f64>, x: &[Vec<f64>], y: &[usize]) -> f64 {
        x.iter().zip(y).filter(|(r, &t)| argmax(&pred(r)) == t).count() as f64 / y.len() as f64
    }

    #[test]
    fn unbounded_tree_memorizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x: Vec<Vec<f64>> = (0..150).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
        let y: Vec<usize> = (0..150).map(|_| rng.random_range(0..3)).collect();
        for criterion in [Criterion::Gini, Criterion::Entropy] {
            let t = DecisionTree::fit(&x, &y, 3, &TreeConfig { criterion, ..Default::default() }, 0).unwrap();
            assert_eq!(accuracy(|r| t.predict_proba(r).to_vec(), &x, &y), 1.0);
        }
        let stump = DecisionTree::fit(&x, &y, 3, &TreeConfig { max_depth: Some(1), ..Default::default() }, 0).unwrap();
        assert_eq!(stump.depth(), 1);
    }

    #[test]
    fn split_structure_ignores_positive_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<Vec<f64>> = (0..80).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let y: Vec<usize> = x.iter().map(|r| usize::from(r[0] + r[2] > 1.0)).collect();
        let scaled: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0] * 1000.0, r[1], r[2] * 0.01]).collect();
        let a = DecisionTree::fit(&x, &y, 2, &TreeConfig::default(), 0).unwrap();
        let b = DecisionTree::fit(&scaled, &y, 2, &TreeConfig::default(), 0).unwrap();
        for (r, s) in x.iter().zip(&scaled) {
            assert_eq!(argmax(a.predict_proba(r)), argmax(b.predict_proba(s)));
        }
        let feats = |t: &DecisionTree| -> Vec<usize> { t.nodes.iter().filter_map(|n| if let Node::Split { feature, .. } = n { Some(*feature) } else { None }).collect() };
        assert_eq!(feats(&a), feats(&b));
    }

    #[test]
    fn forest_on_two_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let nrm = Normal::new(0.0, 1.0).unwrap();
        let mk = |rng: &mut ChaCha8Rng, n: usize| {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for i in 0..n {
                let c = i % 2;
                let shift = if c == 1 { 1.5 } else { 0.0 };
                x.push((0..5).map(|_| nrm.sample(rng) + shift).collect::<Vec<f64>>());
                y.push(c);
            }
            (x, y)
        };
        let (xt, yt) = mk(&mut rng, 200);
        let (xs, ys) = mk(&mut rng, 400);
        let rf = RandomForest::fit(&xt, &yt, 2, &ForestConfig { n_estimators: 64, ..Default::default() }, 0).unwrap();
        let acc = accuracy(|r| rf.predict_proba(r), &xs, &ys);
        // Bayes accuracy with separation 1.5·√5 is Φ(1.677) ≈ 0.953.
        assert!(acc > 0.88, "{acc}");
        let p = rf.predict_proba(&xs[0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn balanced_weights_shift_a_minority_leaf() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![if i < 9 { 0.0 } else { 1.0 }]).collect();
        let mut y = vec![0usize; 10];
        y[8] = 1;
        let t = DecisionTree::fit(&x, &y, 2, &TreeConfig { max_depth: Some(0), ..Default::default() }, 0).unwrap();
        assert_eq!(argmax(t.predict_proba(&[0.0])), 0);
        let t = DecisionTree::fit(&x, &y, 2, &TreeConfig { max_depth: Some(0), balanced: true, ..Default::default() }, 0).unwrap();
        assert!((t.predict_proba(&[0.0])[1] - 0.5).abs() < 1e-12);
    }
}
