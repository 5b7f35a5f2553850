//! Set classifier: a shared per-playlist encoder, mean/max/sum pooling and a
//! dense head.

use std::cmp::Ordering;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{softmax_cross_entropy, Activation, Adam, Mlp, MlpTrace};
use super::LearnError;
use crate::eval::weighted_f1;
use crate::scalar::{argmax, softmax, Scalar};

/// Encoder widths after the input layer, truncated to the layer count.
pub const PHI_WIDTHS: [usize; 3] = [64, 32, 16];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepSet<T> {
    pub phi: Mlp<T>,
    pub rho: Mlp<T>,
}

/// Layer sizes for the encoder and head.
pub fn deepset_sizes(input_dim: usize, phi_layers: usize, rho_layers: usize, n_classes: usize) -> (Vec<usize>, Vec<usize>) {
    let mut phi = vec![input_dim];
    phi.extend(PHI_WIDTHS.iter().take(phi_layers.clamp(1, PHI_WIDTHS.len())));
    let pooled = 3 * phi.last().unwrap();
    let mut rho = vec![pooled];
    for i in 1..rho_layers.max(1) {
        rho.push((pooled >> i).max(n_classes));
    }
    rho.push(n_classes);
    (phi, rho)
}

/// Row order that depends only on row contents.
fn canonical_order<T: Scalar>(set: &[Vec<T>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.sort_by(|&a, &b| {
        for (x, y) in set[a].iter().zip(&set[b]) {
            match x.to_f64_lossy().total_cmp(&y.to_f64_lossy()) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    });
    idx
}

struct SetTrace<T> {
    order: Vec<usize>,
    phi: Vec<MlpTrace<T>>,
    argmax: Vec<usize>,
    rho: MlpTrace<T>,
}

impl<T: Scalar> DeepSet<T> {
    pub fn new(phi: Mlp<T>, rho: Mlp<T>) -> Result<Self, LearnError> {
        if rho.input_dim() != 3 * phi.output_dim() {
            return Err(LearnError::Shape(format!(
                "head input {} must be 3 × encoder output {}",
                rho.input_dim(),
                phi.output_dim()
            )));
        }
        Ok(DeepSet { phi, rho })
    }

    pub fn init<R: rand::Rng>(
        input_dim: usize,
        phi_layers: usize,
        rho_layers: usize,
        n_classes: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let (ps, rs) = deepset_sizes(input_dim, phi_layers, rho_layers, n_classes);
        let phi = Mlp::init(&ps, vec![activation; ps.len() - 1], rng);
        let mut acts = vec![activation; rs.len() - 1];
        *acts.last_mut().unwrap() = Activation::Identity;
        let rho = Mlp::init(&rs, acts, rng);
        DeepSet { phi, rho }
    }

    pub fn input_dim(&self) -> usize {
        self.phi.input_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.rho.output_dim()
    }

    pub fn n_params(&self) -> usize {
        self.phi.params.len() + self.rho.params.len()
    }

    pub fn params(&self) -> Vec<T> {
        let mut p = self.phi.params.clone();
        p.extend_from_slice(&self.rho.params);
        p
    }

    pub fn set_params(&mut self, p: &[T]) {
        let n = self.phi.params.len();
        self.phi.params.copy_from_slice(&p[..n]);
        self.rho.params.copy_from_slice(&p[n..]);
    }

    fn check(&self, set: &[Vec<T>]) -> Result<(), LearnError> {
        if set.is_empty() {
            return Err(LearnError::EmptySet);
        }
        if let Some(r) = set.iter().find(|r| r.len() != self.input_dim()) {
            return Err(LearnError::Dimension { expected: self.input_dim(), got: r.len() });
        }
        Ok(())
    }

    /// Mean, max and sum of the encoded rows, concatenated.
    pub fn embed(&self, set: &[Vec<T>]) -> Result<Vec<T>, LearnError> {
        self.check(set)?;
        Ok(self.run(set).rho.outputs[0].clone())
    }

    fn run(&self, set: &[Vec<T>]) -> SetTrace<T> {
        let order = canonical_order(set);
        let m = self.phi.output_dim();
        let phi: Vec<MlpTrace<T>> = order.iter().map(|&i| self.phi.trace(&set[i])).collect();
        let mut sum = vec![T::zero(); m];
        let mut max = phi[0].output().to_vec();
        let mut arg = vec![0usize; m];
        for (j, t) in phi.iter().enumerate() {
            for (k, &z) in t.output().iter().enumerate() {
                sum[k] += z;
                if z > max[k] {
                    max[k] = z;
                    arg[k] = j;
                }
            }
        }
        let n = T::from_usize_lossy(set.len());
        let mut pooled: Vec<T> = sum.iter().map(|&s| s / n).collect();
        pooled.extend_from_slice(&max);
        pooled.extend_from_slice(&sum);
        let rho = self.rho.trace(&pooled);
        SetTrace { order, phi, argmax: arg, rho }
    }

    pub fn logits(&self, set: &[Vec<T>]) -> Result<Vec<T>, LearnError> {
        self.check(set)?;
        Ok(self.run(set).rho.output().to_vec())
    }

    /// Class distribution for one set of rows. Independent of row order.
    pub fn predict_proba(&self, set: &[Vec<T>]) -> Result<Vec<T>, LearnError> {
        Ok(softmax(&self.logits(set)?))
    }

    /// Cross-entropy of one labeled set; adds its gradient to `grad`.
    pub fn loss_and_grad(&self, set: &[Vec<T>], target: usize, grad: &mut [T]) -> Result<T, LearnError> {
        self.check(set)?;
        let tr = self.run(set);
        let (loss, dlogits, _) = softmax_cross_entropy(tr.rho.output(), target);
        let np = self.phi.params.len();
        let (gphi, grho) = grad.split_at_mut(np);
        let dpooled = self.rho.backward(&tr.rho, &dlogits, grho);
        let m = self.phi.output_dim();
        let n = T::from_usize_lossy(set.len());
        for (j, t) in tr.phi.iter().enumerate() {
            let dz: Vec<T> = (0..m)
                .map(|k| {
                    let mut g = dpooled[k] / n + dpooled[2 * m + k];
                    if tr.argmax[k] == j {
                        g += dpooled[m + k];
                    }
                    g
                })
                .collect();
            self.phi.backward(t, &dz, gphi);
        }
        debug_assert_eq!(tr.order.len(), set.len());
        Ok(loss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepSetConfig {
    pub phi_layers: usize,
    pub rho_layers: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for DeepSetConfig {
    fn default() -> Self {
        DeepSetConfig {
            phi_layers: 2,
            rho_layers: 2,
            activation: Activation::Relu,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            patience: 20,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_score: f64,
    /// Mean loss of every optimizer step.
    pub step_losses: Vec<f64>,
    /// Selection score after each epoch.
    pub epoch_scores: Vec<f64>,
    pub stopped_early: bool,
}

pub type LabeledSet<T> = (Vec<Vec<T>>, usize);

fn set_f1<T: Scalar>(model: &DeepSet<T>, data: &[LabeledSet<T>]) -> Result<f64, LearnError> {
    let mut truth = Vec::with_capacity(data.len());
    let mut pred = Vec::with_capacity(data.len());
    for (set, y) in data {
        truth.push(*y);
        pred.push(argmax(&model.logits(set)?));
    }
    Ok(weighted_f1(&truth, &pred))
}

/// Trains on whole-user mini-batches with Adam. Early stopping tracks weighted
/// F1 on `validation` (training data when absent) and restores the best epoch.
pub fn train_deepset<T: Scalar>(
    train: &[LabeledSet<T>],
    validation: Option<&[LabeledSet<T>]>,
    n_classes: usize,
    config: &DeepSetConfig,
    seed: u64,
) -> Result<(DeepSet<T>, TrainLog), LearnError> {
    let first = train.first().ok_or(LearnError::EmptyTrainingSet)?;
    let dim = first.0.first().ok_or(LearnError::EmptySet)?.len();
    if let Some(y) = train.iter().map(|t| t.1).find(|&y| y >= n_classes) {
        return Err(LearnError::Label { label: y, n_classes });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = DeepSet::init(dim, config.phi_layers, config.rho_layers, n_classes, config.activation, &mut rng);
    let mut opt = Adam::new(model.n_params(), T::lit(config.learning_rate));
    let mut params = model.params();
    let mut best = params.clone();
    let mut log = TrainLog { best_score: f64::NEG_INFINITY, ..Default::default() };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batch = config.batch_size.max(1);
    let monitor = validation.unwrap_or(train);
    let mut since_best = 0;
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let mut grad = vec![T::zero(); params.len()];
            let mut loss = T::zero();
            for &i in chunk {
                let (set, y) = &train[i];
                loss += model.loss_and_grad(set, *y, &mut grad)?;
            }
            let scale = T::one() / T::from_usize_lossy(chunk.len());
            let loss = (loss * scale).to_f64_lossy();
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(LearnError::Diverged { epoch });
            }
            for g in grad.iter_mut() {
                *g *= scale;
            }
            log.step_losses.push(loss);
            opt.step(&mut params, &grad);
            model.set_params(&params);
        }
        log.epochs = epoch + 1;
        let score = set_f1(&model, monitor)?;
        log.epoch_scores.push(score);
        if score > log.best_score {
            log.best_score = score;
            log.best_epoch = epoch + 1;
            best.copy_from_slice(&params);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    debug!("deepset: {} epochs, best {} at {}", log.epochs, log.best_score, log.best_epoch);
    model.set_params(&best);
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::nn::gradient_check;
    use rand::Rng;

    #[test]
    fn sizes_follow_the_funnel() {
        assert_eq!(deepset_sizes(111, 1, 1, 2), (vec![111, 64], vec![192, 2]));
        assert_eq!(deepset_sizes(111, 3, 3, 10), (vec![111, 64, 32, 16], vec![48, 24, 12, 10]));
    }

    #[test]
    fn singleton_pools_the_same_vector_thrice() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ds = DeepSet::<f64>::init(4, 1, 1, 3, Activation::Tanh, &mut rng);
        let x = vec![vec![0.5, -0.1, 0.3, 2.0]];
        let z = ds.phi.forward(&x[0]);
        let e = ds.embed(&x).unwrap();
        assert_eq!(&e[..z.len()], &z[..]);
        assert_eq!(&e[z.len()..2 * z.len()], &z[..]);
        assert_eq!(&e[2 * z.len()..], &z[..]);
        let p = ds.predict_proba(&x).unwrap();
        assert_eq!(p, softmax(&ds.rho.forward(&e)));
    }

    #[test]
    fn hand_computed_two_element_set() {
        // φ: identity 2→2 with W = I, b = 0. ρ: 6→2 reading mean[0] and max[1].
        let phi = Mlp { sizes: vec![2, 2], activations: vec![Activation::Identity], params: vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0] };
        let mut rp = vec![0.0; 6 * 2 + 2];
        rp[0] = 1.0; // out0 <- mean0
        rp[6 + 3] = 1.0; // out1 <- max1
        rp[6 + 5] = -0.5; // out1 <- -0.5 sum1
        let rho = Mlp { sizes: vec![6, 2], activations: vec![Activation::Identity], params: rp };
        let ds = DeepSet::new(phi, rho).unwrap();
        let set = vec![vec![1.0, 2.0], vec![3.0, -1.0]];
        // mean = [2, 0.5], max = [3, 2], sum = [4, 1] -> logits [2, 2 - 0.5].
        let logits = ds.logits(&set).unwrap();
        assert_eq!(logits, vec![2.0, 1.5]);
        let e = (0.5f64).exp();
        let p = ds.predict_proba(&set).unwrap();
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn permutations_are_bitwise_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ds = DeepSet::<f64>::init(5, 2, 2, 3, Activation::Relu, &mut rng);
        let mut set: Vec<Vec<f64>> = (0..7).map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let p0 = ds.predict_proba(&set).unwrap();
        for _ in 0..20 {
            set.shuffle(&mut rng);
            assert_eq!(ds.predict_proba(&set).unwrap(), p0);
        }
        assert!(matches!(ds.predict_proba(&[]), Err(LearnError::EmptySet)));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for act in [Activation::Tanh, Activation::Relu] {
            let ds = DeepSet::<f64>::init(3, 2, 2, 2, act, &mut rng);
            let set: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let f = |p: &[f64]| {
                let mut m = ds.clone();
                m.set_params(p);
                let mut g = vec![0.0; p.len()];
                let l = m.loss_and_grad(&set, 1, &mut g).unwrap();
                (l, g)
            };
            let err = gradient_check(&ds.params(), f, 1e-6);
            assert!(err < 1e-4, "{act:?}: {err}");
        }
    }

    #[test]
    fn learns_a_mean_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<LabeledSet<f64>> = (0..200)
            .map(|_| {
                let n = rng.random_range(1..6);
                let set: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
                let m: f64 = set.iter().map(|r| r[0]).sum::<f64>() / n as f64;
                (set, usize::from(m > 0.0))
            })
            .collect();
        let cfg = DeepSetConfig { phi_layers: 1, rho_layers: 2, learning_rate: 1e-2, max_epochs: 150, patience: 40, ..Default::default() };
        let (model, log) = train_deepset(&data, None, 2, &cfg, 0).unwrap();
        assert!(log.best_score > 0.95, "{}", log.best_score);
        assert!(set_f1(&model, &data).unwrap() > 0.95);
    }
}
