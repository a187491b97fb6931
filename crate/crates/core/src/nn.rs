//! Minimal dense network engine: parameters, forward pass, exact backprop.
//!
//! Everything is 64-bit floating point and deterministic: the loss and
//! gradient are pure functions of (parameters, batch). Layer `j` stores its
//! row-major `out x in` weight matrix followed by its bias in one flat
//! [`ParamVector`] layer with id `j`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::rng::next_f64;

/// Hidden-layer activation. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SoftmaxCrossEntropy,
    MeanSquaredError,
}

/// Ground truth for one sample: a class index or a real-valued target.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    Real(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub target: Target,
}

impl Sample {
    pub fn class(features: Vec<f64>, label: usize) -> Self {
        Sample {
            features,
            target: Target::Class(label),
        }
    }
}

/// Architecture description, separate from any particular weights.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelSpec {
    /// Sizes from input to output, e.g. `[20, 32, 5]`.
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub loss: LossKind,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::config(
                "model.layer_sizes needs at least an input and an output size",
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::config("model.layer_sizes entries must be positive"));
        }
        Ok(())
    }

    /// Builds a model with per-layer uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    pub fn build(&self, rng: &mut ChaCha12Rng) -> Result<MlpModel> {
        self.validate()?;
        let mut layers = Vec::new();
        for (j, pair) in self.layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n = fan_out * fan_in + fan_out;
            let values: Vec<f64> = (0..n)
                .map(|_| (2.0 * next_f64(rng) - 1.0) * bound)
                .collect();
            layers.push((j as u32, values));
        }
        MlpModel::with_params(self.clone(), ParamVector::from_layers(layers))
    }

    fn param_layout(&self) -> Vec<usize> {
        self.layer_sizes
            .windows(2)
            .map(|p| p[1] * p[0] + p[1])
            .collect()
    }

    pub fn total_dim(&self) -> usize {
        self.param_layout().iter().sum()
    }
}

/// Dense feed-forward network with explicit parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    spec: ModelSpec,
    params: ParamVector,
}

impl MlpModel {
    pub fn with_params(spec: ModelSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        let layout = spec.param_layout();
        if params.layers().len() != layout.len()
            || params
                .layers()
                .iter()
                .zip(&layout)
                .any(|(l, &len)| l.values.len() != len)
        {
            return Err(Error::config(format!(
                "parameter layout does not match layer sizes {:?}",
                spec.layer_sizes
            )));
        }
        Ok(MlpModel { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if !self.params.same_layout(&params) {
            return Err(Error::layout("set_params: layout differs from model"));
        }
        self.params = params;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.spec.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.spec.layer_sizes.last().unwrap()
    }

    /// Network output for one feature vector (logits for classification).
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.input_dim() {
            return Err(Error::config(format!(
                "feature length {} does not match model input {}",
                features.len(),
                self.input_dim()
            )));
        }
        let mut activation = features.to_vec();
        let last = self.params.layers().len() - 1;
        for (j, layer) in self.params.layers().iter().enumerate() {
            let fan_in = self.spec.layer_sizes[j];
            let fan_out = self.spec.layer_sizes[j + 1];
            let (weights, bias) = layer.values.split_at(fan_out * fan_in);
            let mut z = vec![0.0; fan_out];
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let mut acc = bias[o];
                for (w, a) in row.iter().zip(&activation) {
                    acc += w * a;
                }
                *zo = acc;
            }
            if j < last {
                for zo in &mut z {
                    *zo = self.spec.activation.apply(*zo);
                }
            }
            activation = z;
        }
        Ok(activation)
    }

    /// Mean loss over a non-empty batch.
    pub fn forward_loss(&self, batch: &[Sample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::config("forward_loss: empty batch"));
        }
        let mut total = 0.0;
        for sample in batch {
            let output = self.forward(&sample.features)?;
            total += self.sample_loss(&output, &sample.target)?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Gradient of [`Self::forward_loss`] with the same layout as the parameters.
    pub fn backward(&self, batch: &[Sample]) -> Result<ParamVector> {
        if batch.is_empty() {
            return Err(Error::config("backward: empty batch"));
        }
        let mut grad = self.params.zeros_like();
        for sample in batch {
            self.accumulate_sample_gradient(sample, &mut grad)?;
        }
        grad.scale_in_place(1.0 / batch.len() as f64);
        Ok(grad)
    }

    /// Argmax class prediction.
    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        let output = self.forward(features)?;
        Ok(output
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0))
    }

    /// Fraction of class-labelled samples predicted correctly.
    pub fn accuracy(&self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::config("accuracy: empty sample set"));
        }
        let mut hits = 0usize;
        for sample in samples {
            let Target::Class(label) = sample.target else {
                return Err(Error::config("accuracy: sample has no class label"));
            };
            if self.predict(&sample.features)? == label {
                hits += 1;
            }
        }
        Ok(hits as f64 / samples.len() as f64)
    }

    fn sample_loss(&self, output: &[f64], target: &Target) -> Result<f64> {
        match (self.spec.loss, target) {
            (LossKind::SoftmaxCrossEntropy, Target::Class(label)) => {
                if *label >= output.len() {
                    return Err(Error::data(format!(
                        "class label {label} out of range for {} outputs",
                        output.len()
                    )));
                }
                Ok(log_sum_exp(output) - output[*label])
            }
            (LossKind::MeanSquaredError, target) => {
                let target = self.real_target(target, output.len())?;
                let k = output.len() as f64;
                Ok(output
                    .iter()
                    .zip(&target)
                    .map(|(y, t)| (y - t) * (y - t))
                    .sum::<f64>()
                    / k)
            }
            (LossKind::SoftmaxCrossEntropy, Target::Real(_)) => Err(Error::config(
                "cross-entropy loss needs class-labelled samples",
            )),
        }
    }

    /// Loss gradient at the output pre-activation.
    fn output_delta(&self, output: &[f64], target: &Target) -> Result<Vec<f64>> {
        match (self.spec.loss, target) {
            (LossKind::SoftmaxCrossEntropy, Target::Class(label)) => {
                if *label >= output.len() {
                    return Err(Error::data(format!(
                        "class label {label} out of range for {} outputs",
                        output.len()
                    )));
                }
                let lse = log_sum_exp(output);
                let mut delta: Vec<f64> = output.iter().map(|z| (z - lse).exp()).collect();
                delta[*label] -= 1.0;
                Ok(delta)
            }
            (LossKind::MeanSquaredError, target) => {
                let target = self.real_target(target, output.len())?;
                let k = output.len() as f64;
                Ok(output
                    .iter()
                    .zip(&target)
                    .map(|(y, t)| 2.0 * (y - t) / k)
                    .collect())
            }
            (LossKind::SoftmaxCrossEntropy, Target::Real(_)) => Err(Error::config(
                "cross-entropy loss needs class-labelled samples",
            )),
        }
    }

    /// One-hot encodes class targets for the MSE loss.
    fn real_target(&self, target: &Target, dim: usize) -> Result<Vec<f64>> {
        match target {
            Target::Real(values) => {
                if values.len() != dim {
                    return Err(Error::config(format!(
                        "target length {} does not match model output {dim}",
                        values.len()
                    )));
                }
                Ok(values.clone())
            }
            Target::Class(label) => {
                if *label >= dim {
                    return Err(Error::data(format!(
                        "class label {label} out of range for {dim} outputs"
                    )));
                }
                let mut one_hot = vec![0.0; dim];
                one_hot[*label] = 1.0;
                Ok(one_hot)
            }
        }
    }

    fn accumulate_sample_gradient(&self, sample: &Sample, grad: &mut ParamVector) -> Result<()> {
        if sample.features.len() != self.input_dim() {
            return Err(Error::config(format!(
                "feature length {} does not match model input {}",
                sample.features.len(),
                self.input_dim()
            )));
        }
        let num_layers = self.params.layers().len();

        // Forward pass keeping pre- and post-activation values per layer.
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(num_layers + 1);
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(num_layers);
        post.push(sample.features.clone());
        for (j, layer) in self.params.layers().iter().enumerate() {
            let fan_in = self.spec.layer_sizes[j];
            let fan_out = self.spec.layer_sizes[j + 1];
            let (weights, bias) = layer.values.split_at(fan_out * fan_in);
            let input = &post[j];
            let mut z = vec![0.0; fan_out];
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let mut acc = bias[o];
                for (w, a) in row.iter().zip(input) {
                    acc += w * a;
                }
                *zo = acc;
            }
            pre.push(z.clone());
            if j < num_layers - 1 {
                for zo in &mut z {
                    *zo = self.spec.activation.apply(*zo);
                }
            }
            post.push(z);
        }

        let mut delta = self.output_delta(&pre[num_layers - 1], &sample.target)?;

        // Backward pass, top layer down.
        for j in (0..num_layers).rev() {
            let fan_in = self.spec.layer_sizes[j];
            let fan_out = self.spec.layer_sizes[j + 1];
            let layer = &self.params.layers()[j];
            let (weights, _) = layer.values.split_at(fan_out * fan_in);
            let input = &post[j];

            {
                let gl = &mut grad.layers_mut()[j];
                let (gw, gb) = gl.values.split_at_mut(fan_out * fan_in);
                for (o, &d) in delta.iter().enumerate() {
                    let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                    gb[o] += d;
                }
            }

            if j > 0 {
                let mut next = vec![0.0; fan_in];
                for (o, &d) in delta.iter().enumerate() {
                    let row = &weights[o * fan_in..(o + 1) * fan_in];
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += w * d;
                    }
                }
                for (n, z) in next.iter_mut().zip(&pre[j - 1]) {
                    *n *= self.spec.activation.derivative(*z);
                }
                delta = next;
            }
        }
        Ok(())
    }
}

/// Shifted log-sum-exp, finite for finite inputs.
fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
