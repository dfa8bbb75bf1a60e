//! Fully connected verification networks with hand-written backpropagation.
//!
//! Hidden layers use a rectifier; the output layer is linear and produces two
//! logits (non-kin, kin). Training is plain mini-batch SGD with optional L2
//! weight decay.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{dot, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// out × in
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Parameters of a rectifier MLP; the last layer has no activation.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

mod train;

pub use train::{train, Branch, EpochStats, FusionMode, PairModel, TrainConfig};

/// Activations recorded by [`MlpParams::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre_activations: Vec<Vec<f64>>,
}

/// Per-layer parameter gradients, shaped like [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    /// Builds a network from explicit layers, checking that dimensions chain.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("a network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::Shape(format!(
                    "layer {i}: bias has {} entries for {} outputs",
                    layer.bias.len(),
                    layer.output_dim()
                )));
            }
            if !layer.weight.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::InvalidInput(format!("layer {i} has non-finite parameters")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(MlpParams { layers })
    }

    /// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`, zero biases.
    pub fn init(dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer dimensions {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..=limit)).collect();
                Layer {
                    weight: Matrix::from_vec(fan_out, fan_in, data).expect("dims checked"),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        MlpParams::new(layers)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::output_dim))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.as_slice().len() + l.bias.len()).sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let last = self.layers.len() - 1;
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre_activations: Vec::with_capacity(self.layers.len()),
        };
        let mut x = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z: Vec<f64> = (0..layer.output_dim())
                .map(|r| dot(layer.weight.row(r), &x) + layer.bias[r])
                .collect();
            let next = if i == last {
                z.clone()
            } else {
                z.iter().map(|&v| v.max(0.0)).collect()
            };
            cache.inputs.push(std::mem::replace(&mut x, next));
            cache.pre_activations.push(z);
        }
        Ok((x, cache))
    }

    /// Logits only.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.0)
    }

    /// Reverse-mode gradients of a scalar loss given `∂L/∂logits`.
    pub fn backward(&self, cache: &MlpCache, grad_logits: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        let mut grads = MlpGrads::zeros_like(self);
        let grad_input = self.backward_into(cache, grad_logits, &mut grads, 1.0, true)?;
        Ok((grads, grad_input.expect("requested")))
    }

    /// Adds `scale ·` the parameter gradients into `sink`. The input gradient
    /// is returned only when `want_input` is set.
    pub fn backward_into(
        &self,
        cache: &MlpCache,
        grad_logits: &[f64],
        sink: &mut MlpGrads,
        scale: f64,
        want_input: bool,
    ) -> Result<Option<Vec<f64>>> {
        self.check_cache(cache)?;
        if grad_logits.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "expected {} output gradients, got {}",
                self.output_dim(),
                grad_logits.len()
            )));
        }
        if sink.layers.len() != self.layers.len()
            || sink.layers.iter().zip(&self.layers).any(|(g, l)| g.weight.dims() != l.weight.dims())
        {
            return Err(Error::State("gradient buffer does not match this network".into()));
        }
        let last = self.layers.len() - 1;
        let mut delta = grad_logits.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if i != last {
                for (d, &z) in delta.iter_mut().zip(&cache.pre_activations[i]) {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let x = &cache.inputs[i];
            let propagate = i > 0 || want_input;
            let mut upstream = if propagate { vec![0.0; layer.input_dim()] } else { Vec::new() };
            let g = &mut sink.layers[i];
            for (r, &d) in delta.iter().enumerate() {
                g.bias[r] += scale * d;
                if d == 0.0 {
                    continue;
                }
                let sd = scale * d;
                for (gw, &xv) in g.weight.row_mut(r).iter_mut().zip(x) {
                    *gw += sd * xv;
                }
                if propagate {
                    for (u, &w) in upstream.iter_mut().zip(layer.weight.row(r)) {
                        *u += d * w;
                    }
                }
            }
            delta = upstream;
        }
        Ok(want_input.then_some(delta))
    }

    fn check_cache(&self, cache: &MlpCache) -> Result<()> {
        let consistent = cache.inputs.len() == self.layers.len()
            && cache.pre_activations.len() == self.layers.len()
            && self.layers.iter().zip(&cache.inputs).zip(&cache.pre_activations).all(
                |((l, x), z)| x.len() == l.input_dim() && z.len() == l.output_dim(),
            );
        if consistent {
            Ok(())
        } else {
            Err(Error::State("activation cache does not match this network".into()))
        }
    }

    /// `θ ← θ − lr·(g + λ·W)`; the L2 term applies to weights, not biases.
    pub fn sgd_step(&mut self, grads: &MlpGrads, learning_rate: f64, l2_penalty: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (p, &d) in layer.weight.as_mut_slice().iter_mut().zip(g.weight.as_slice()) {
                *p -= learning_rate * (d + l2_penalty * *p);
            }
            for (b, d) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= learning_rate * d;
            }
        }
    }
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        MlpGrads {
            layers: params
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Matrix::zeros(l.output_dim(), l.input_dim()),
                    bias: vec![0.0; l.output_dim()],
                })
                .collect(),
        }
    }

    /// `self += scale · other`.
    pub fn accumulate(&mut self, other: &MlpGrads, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, &y) in a.weight.as_mut_slice().iter_mut().zip(b.weight.as_slice()) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
    }

    /// Sets every gradient to zero, keeping the allocation.
    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.weight.as_mut_slice().fill(0.0);
            l.bias.fill(0.0);
        }
    }
}

/// Numerically stable softmax.
/// Copy of `x` with its first `odd` entries negated.
pub fn flip_odd(x: &[f64], odd: usize) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| if i < odd { -v } else { v })
        .collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of a softmax over `logits` against class `label`, and its
/// gradient `softmax − onehot(label)`.
pub fn softmax_xent(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    assert!(label < logits.len(), "label {label} out of range");
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    let loss = (log_sum - logits[label]).max(0.0);
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    (loss, grad)
}

/// Probabilities produced by the two branches and their fusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedScore {
    /// Absent when the appearance branch is not part of the model.
    pub p_appearance: Option<f64>,
    /// Absent for feature-level fusion, where no separate shape classifier exists.
    pub p_shape: Option<f64>,
    pub p_fused: f64,
}

impl FusedScore {
    pub fn is_kin(&self) -> bool {
        self.p_fused >= DECISION_THRESHOLD
    }
}

pub const DECISION_THRESHOLD: f64 = 0.5;

/// `weight · p_appearance + (1 − weight) · p_shape`.
pub fn fuse(p_appearance: f64, p_shape: f64, weight: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::Config(format!("fusion weight {weight} is outside [0, 1]")));
    }
    for p in [p_appearance, p_shape] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!("probability {p} is outside [0, 1]")));
        }
    }
    Ok(weight * p_appearance + (1.0 - weight) * p_shape)
}
