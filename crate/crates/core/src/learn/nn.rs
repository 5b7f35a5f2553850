//! Dense feed-forward networks over a flat parameter vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::{softmax, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - a * a,
            Activation::Identity => T::one(),
        }
    }
}

/// Layer `l` maps `sizes[l]` inputs to `sizes[l+1]` outputs with weights
/// stored row-major (`out × in`) followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    pub sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub params: Vec<T>,
}

/// Per-layer outputs of one forward pass; `outputs[0]` is the input.
#[derive(Debug, Clone)]
pub struct MlpTrace<T> {
    pub outputs: Vec<Vec<T>>,
}

impl<T> MlpTrace<T> {
    pub fn output(&self) -> &[T] {
        self.outputs.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl<T: Scalar> Mlp<T> {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn zeros(sizes: &[usize], activations: Vec<Activation>) -> Self {
        assert!(sizes.len() >= 2 && activations.len() == sizes.len() - 1);
        Mlp { sizes: sizes.to_vec(), activations, params: vec![T::zero(); Self::param_count(sizes)] }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng>(sizes: &[usize], activations: Vec<Activation>, rng: &mut R) -> Self {
        let mut m = Self::zeros(sizes, activations);
        let mut off = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut m.params[off..off + fan_in * fan_out] {
                *p = T::lit(rng.random_range(-bound..bound));
            }
            off += fan_in * fan_out + fan_out;
        }
        m
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.activations.len()
    }

    /// Offsets of each layer's weight block and bias block.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let w: usize = self.sizes[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        (w, w + i * o)
    }

    /// Indices of weight (not bias) entries, for L2 penalties.
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.params.len()];
        for l in 0..self.n_layers() {
            let (w, b) = self.layer_offsets(l);
            for m in &mut mask[w..b] {
                *m = true;
            }
        }
        mask
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        self.trace(x).outputs.pop().unwrap()
    }

    pub fn trace(&self, x: &[T]) -> MlpTrace<T> {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut outputs = Vec::with_capacity(self.n_layers() + 1);
        outputs.push(x.to_vec());
        for l in 0..self.n_layers() {
            let (w, b) = self.layer_offsets(l);
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let act = self.activations[l];
            let input = &outputs[l];
            let weights = &self.params[w..b];
            let bias = &self.params[b..b + n_out];
            let out: Vec<T> = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    let mut z = bias[o];
                    for (&wi, &xi) in row.iter().zip(input) {
                        z += wi * xi;
                    }
                    act.apply(z)
                })
                .collect();
            outputs.push(out);
        }
        MlpTrace { outputs }
    }

    /// Accumulates `d loss / d params` into `grad` given the gradient with
    /// respect to the network output, and returns the gradient with respect to
    /// the input.
    pub fn backward(&self, trace: &MlpTrace<T>, grad_output: &[T], grad: &mut [T]) -> Vec<T> {
        let mut delta = grad_output.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (w, b) = self.layer_offsets(l);
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let act = self.activations[l];
            let out = &trace.outputs[l + 1];
            let input = &trace.outputs[l];
            for (d, &a) in delta.iter_mut().zip(out) {
                *d *= act.derivative_from_output(a);
            }
            let mut next = vec![T::zero(); n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == T::zero() {
                    continue;
                }
                let row = w + o * n_in;
                for i in 0..n_in {
                    grad[row + i] += d * input[i];
                    next[i] += d * self.params[row + i];
                }
                grad[b + o] += d;
            }
            delta = next;
        }
        delta
    }
}

/// Softmax cross-entropy on logits, with its gradient.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], target: usize) -> (T, Vec<T>, Vec<T>) {
    let p = softmax(logits);
    let tiny = T::min_positive_value();
    let loss = -p[target].max(tiny).ln();
    let mut g = p.clone();
    g[target] -= T::one();
    (loss, g, p)
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n: usize, lr: T) -> Self {
        Adam {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.t += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        let step = self.lr * c2.sqrt() / c1;
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * grad[i] * grad[i];
            params[i] -= step * self.m[i] / (self.v[i].sqrt() + self.eps);
        }
    }
}

/// Worst relative error between an analytic gradient and central finite
/// differences with step `1e-5`. Entries where both are below `floor` in
/// magnitude are compared against `floor`.
pub fn gradient_check<T, F>(params: &[T], mut loss_and_grad: F, floor: T) -> T
where
    T: Scalar,
    F: FnMut(&[T]) -> (T, Vec<T>),
{
    let h = T::lit(1e-5);
    let (_, analytic) = loss_and_grad(params);
    let mut p = params.to_vec();
    let mut worst = T::zero();
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let (fp, _) = loss_and_grad(&p);
        p[i] = orig - h;
        let (fm, _) = loss_and_grad(&p);
        p[i] = orig;
        let numeric = (fp - fm) / (T::lit(2.0) * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(floor);
        let err = (analytic[i] - numeric).abs() / denom;
        if err > worst {
            worst = err;
        }
    }
    worst
}
