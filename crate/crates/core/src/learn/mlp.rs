//! Per-playlist multilayer perceptron classifier.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{softmax_cross_entropy, Activation, Adam, Mlp};
use super::{check_training, LearnError};
use crate::scalar::{softmax, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    /// L2 penalty on weights.
    pub alpha: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Stop after this many epochs without the loss improving by `tol`.
    pub n_iter_no_change: usize,
    pub tol: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![100],
            activation: Activation::Relu,
            learning_rate: 1e-3,
            alpha: 1e-4,
            max_epochs: 200,
            batch_size: 200,
            n_iter_no_change: 10,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpClassifier<T> {
    pub net: Mlp<T>,
    pub epochs: usize,
    pub loss_curve: Vec<f64>,
}

impl<T: Scalar> MlpClassifier<T> {
    pub fn fit(x: &[Vec<T>], y: &[usize], n_classes: usize, config: &MlpConfig, seed: u64) -> Result<Self, LearnError> {
        let d = check_training(x, y, n_classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![d];
        sizes.extend(config.hidden.iter().copied());
        sizes.push(n_classes);
        let mut acts = vec![config.activation; sizes.len() - 1];
        *acts.last_mut().unwrap() = Activation::Identity;
        let mut net = Mlp::init(&sizes, acts, &mut rng);
        let mask = net.weight_mask();
        let mut opt = Adam::new(net.params.len(), T::lit(config.learning_rate));
        let n = x.len();
        let batch = config.batch_size.clamp(1, n);
        let alpha = T::lit(config.alpha);
        let mut order: Vec<usize> = (0..n).collect();
        let mut best_loss = f64::INFINITY;
        let mut stale = 0;
        let mut curve = Vec::new();
        let mut epochs = 0;
        for epoch in 0..config.max_epochs {
            epochs = epoch + 1;
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(batch) {
                let mut grad = vec![T::zero(); net.params.len()];
                let mut loss = T::zero();
                for &i in chunk {
                    let tr = net.trace(&x[i]);
                    let (l, dl, _) = softmax_cross_entropy(tr.output(), y[i]);
                    loss += l;
                    net.backward(&tr, &dl, &mut grad);
                }
                let m = T::from_usize_lossy(chunk.len());
                let mut penalty = T::zero();
                for ((g, &p), &w) in grad.iter_mut().zip(&net.params).zip(&mask) {
                    *g /= m;
                    if w {
                        *g += alpha * p / m;
                        penalty += p * p;
                    }
                }
                let batch_loss = (loss / m + alpha * penalty / (T::lit(2.0) * m)).to_f64_lossy();
                if !batch_loss.is_finite() {
                    return Err(LearnError::Diverged { epoch });
                }
                epoch_loss += batch_loss * chunk.len() as f64;
                opt.step(&mut net.params, &grad);
            }
            let epoch_loss = epoch_loss / n as f64;
            curve.push(epoch_loss);
            if epoch_loss > best_loss - config.tol {
                stale += 1;
            } else {
                stale = 0;
            }
            best_loss = best_loss.min(epoch_loss);
            if stale >= config.n_iter_no_change {
                break;
            }
        }
        Ok(MlpClassifier { net, epochs, loss_curve: curve })
    }

    pub fn predict_proba(&self, row: &[T]) -> Vec<T> {
        softmax(&self.net.forward(row))
    }
}
