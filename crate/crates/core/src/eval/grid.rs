use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::learn::{Activation, Criterion, Hyperparameters, KnnWeights, ModelKind};

const ACTIVATIONS: [Activation; 2] = [Activation::Relu, Activation::Tanh];
const DEPTHS: [Option<usize>; 4] = [None, Some(3), Some(5), Some(10)];
const CRITERIA: [Criterion; 2] = [Criterion::Gini, Criterion::Entropy];
const RATES: [f64; 3] = [0.01, 0.001, 0.0001];

/// Hyperparameter combinations per model, in evaluation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub models: BTreeMap<ModelKind, Vec<Hyperparameters>>,
}

pub fn lr_grid() -> Vec<Hyperparameters> {
    let mut g = Vec::new();
    for c in [0.01, 0.1, 1.0, 10.0] {
        for fit_intercept in [true, false] {
            for balanced in [false, true] {
                g.push(Hyperparameters::LogisticRegression { c, fit_intercept, balanced });
            }
        }
    }
    g
}

pub fn dt_grid() -> Vec<Hyperparameters> {
    let mut g = Vec::new();
    for criterion in CRITERIA {
        for max_depth in DEPTHS {
            for balanced in [false, true] {
                g.push(Hyperparameters::DecisionTree { criterion, max_depth, balanced });
            }
        }
    }
    g
}

pub fn rf_grid() -> Vec<Hyperparameters> {
    let mut g = Vec::new();
    for criterion in CRITERIA {
        for max_depth in DEPTHS {
            for balanced in [false, true] {
                for n_estimators in [16, 32, 64, 128] {
                    g.push(Hyperparameters::RandomForest { criterion, max_depth, balanced, n_estimators });
                }
            }
        }
    }
    g
}

pub fn knn_grid() -> Vec<Hyperparameters> {
    let mut g = Vec::new();
    for n_neighbors in [3, 5, 7, 10] {
        for weights in [KnnWeights::Uniform, KnnWeights::Distance] {
            g.push(Hyperparameters::Knn { n_neighbors, weights });
        }
    }
    g
}

/// Hidden layouts `(d,)`, `(d, d/2)`, `(d/2,)` for `d` input features.
pub fn mlp_grid(n_features: usize) -> Vec<Hyperparameters> {
    let half = (n_features / 2).max(1);
    let layouts = [vec![n_features], vec![n_features, half], vec![half]];
    let mut g = Vec::new();
    for hidden in &layouts {
        for activation in ACTIVATIONS {
            for learning_rate_init in RATES {
                for alpha in [0.01, 0.001, 0.0001] {
                    g.push(Hyperparameters::Mlp { hidden: hidden.clone(), activation, learning_rate_init, alpha });
                }
            }
        }
    }
    g
}

pub fn deepset_grid() -> Vec<Hyperparameters> {
    let mut g = Vec::new();
    for phi_layers in 1..=3 {
        for rho_layers in 1..=3 {
            for activation in ACTIVATIONS {
                for learning_rate in RATES {
                    g.push(Hyperparameters::DeepSet { phi_layers, rho_layers, activation, learning_rate });
                }
            }
        }
    }
    g
}

impl GridSpec {
    /// The full grids for every model.
    pub fn full(n_features: usize) -> Self {
        let mut models = BTreeMap::new();
        models.insert(ModelKind::RandomGuess, vec![Hyperparameters::RandomGuess]);
        models.insert(ModelKind::LogisticRegression, lr_grid());
        models.insert(ModelKind::DecisionTree, dt_grid());
        models.insert(ModelKind::RandomForest, rf_grid());
        models.insert(ModelKind::Knn, knn_grid());
        models.insert(ModelKind::Mlp, mlp_grid(n_features));
        models.insert(ModelKind::DeepSet, deepset_grid());
        GridSpec { models }
    }

    /// A small grid for quick runs: a few points per model.
    pub fn quick(n_features: usize) -> Self {
        let mut models = BTreeMap::new();
        let half = (n_features / 2).max(1);
        models.insert(ModelKind::RandomGuess, vec![Hyperparameters::RandomGuess]);
        models.insert(
            ModelKind::LogisticRegression,
            vec![
                Hyperparameters::LogisticRegression { c: 1.0, fit_intercept: true, balanced: false },
                Hyperparameters::LogisticRegression { c: 0.1, fit_intercept: true, balanced: true },
            ],
        );
        models.insert(
            ModelKind::DecisionTree,
            vec![
                Hyperparameters::DecisionTree { criterion: Criterion::Gini, max_depth: Some(5), balanced: false },
                Hyperparameters::DecisionTree { criterion: Criterion::Gini, max_depth: None, balanced: false },
            ],
        );
        models.insert(
            ModelKind::RandomForest,
            vec![Hyperparameters::RandomForest { criterion: Criterion::Gini, max_depth: Some(10), balanced: false, n_estimators: 32 }],
        );
        models.insert(
            ModelKind::Knn,
            vec![
                Hyperparameters::Knn { n_neighbors: 5, weights: KnnWeights::Uniform },
                Hyperparameters::Knn { n_neighbors: 10, weights: KnnWeights::Distance },
            ],
        );
        models.insert(
            ModelKind::Mlp,
            vec![
                Hyperparameters::Mlp { hidden: vec![half], activation: Activation::Relu, learning_rate_init: 0.001, alpha: 0.0001 },
                Hyperparameters::Mlp { hidden: vec![n_features], activation: Activation::Tanh, learning_rate_init: 0.01, alpha: 0.001 },
            ],
        );
        models.insert(
            ModelKind::DeepSet,
            vec![
                Hyperparameters::DeepSet { phi_layers: 2, rho_layers: 2, activation: Activation::Relu, learning_rate: 0.001 },
                Hyperparameters::DeepSet { phi_layers: 1, rho_layers: 2, activation: Activation::Tanh, learning_rate: 0.01 },
            ],
        );
        GridSpec { models }
    }

    pub fn restrict(mut self, kinds: &[ModelKind]) -> Self {
        self.models.retain(|k, _| kinds.contains(k));
        self
    }

    pub fn get(&self, kind: ModelKind) -> Option<&[Hyperparameters]> {
        self.models.get(&kind).map(Vec::as_slice)
    }

    pub fn len(&self, kind: ModelKind) -> usize {
        self.get(kind).map_or(0, <[_]>::len)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
        let spec: GridSpec = serde_json::from_str(&text).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
        for (kind, grid) in &spec.models {
            if grid.is_empty() {
                return Err(EvalError::EmptyGrid(*kind));
            }
            if let Some(hp) = grid.iter().find(|h| h.kind() != *kind) {
                return Err(EvalError::Io(format!("{kind} grid contains a {} entry", hp.kind())));
            }
        }
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        let g = GridSpec::full(111);
        assert_eq!(g.len(ModelKind::LogisticRegression), 16);
        assert_eq!(g.len(ModelKind::DecisionTree), 16);
        assert_eq!(g.len(ModelKind::RandomForest), 64);
        assert_eq!(g.len(ModelKind::Knn), 8);
        assert_eq!(g.len(ModelKind::Mlp), 54);
        assert_eq!(g.len(ModelKind::DeepSet), 54);
        assert_eq!(g.len(ModelKind::RandomGuess), 1);
        assert!(matches!(
            &g.get(ModelKind::Mlp).unwrap()[18],
            Hyperparameters::Mlp { hidden, .. } if hidden == &vec![111, 55]
        ));
    }

    #[test]
    fn json_roundtrip() {
        let g = GridSpec::quick(10);
        let back: GridSpec = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(back, g);
    }
}
