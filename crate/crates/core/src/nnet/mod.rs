//! Small feedforward network engine: dense, 2-D convolution, max-pool, ReLU and flatten.
//!
//! The backward pass is parameterized by a [`BackwardRule`] that only affects how
//! gradients cross ReLU layers. The attribution methods are all built on top of it.

mod arch;
mod layer;
mod persist;
mod train;

pub use arch::{ArchSpec, DEFAULT_ARCH};
pub use layer::Layer;
pub use persist::{load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION};
pub use train::{accuracy, train, TrainConfig, TrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How a gradient crosses a ReLU on the way back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackwardRule {
    /// Exact derivative: pass where the forward pre-activation was positive.
    Standard,
    /// Pass positive upstream gradients, ignore the forward mask (DeconvNet).
    PositiveGradOnly,
    /// Pass only where both the pre-activation and the upstream gradient are positive
    /// (guided backpropagation).
    BothMasks,
}

impl BackwardRule {
    #[inline]
    pub fn passes(self, pre_activation: f64, upstream: f64) -> bool {
        match self {
            BackwardRule::Standard => pre_activation > 0.0,
            BackwardRule::PositiveGradOnly => upstream > 0.0,
            BackwardRule::BothMasks => pre_activation > 0.0 && upstream > 0.0,
        }
    }
}

/// A validated layer chain with a designated feature layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    feature_layer: usize,
    num_classes: usize,
    feature_dim: usize,
    seed: Option<u64>,
}

impl Model {
    /// Type-checks the chain. The last layer must produce a vector (the logits).
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>, feature_layer: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidModel("no layers".into()));
        }
        if feature_layer >= layers.len() {
            return Err(Error::InvalidModel(format!(
                "feature layer {feature_layer} out of range for {} layers",
                layers.len()
            )));
        }
        let mut shape = input_shape.clone();
        let mut feature_dim = 0;
        for (i, layer) in layers.iter().enumerate() {
            shape = layer.check_input(i, &shape)?;
            if i == feature_layer {
                feature_dim = shape.iter().product();
            }
        }
        if shape.len() != 1 {
            return Err(Error::InvalidModel(format!(
                "output shape {shape:?} is not a vector"
            )));
        }
        for (i, layer) in layers.iter().enumerate() {
            if let Layer::Dense { weights, bias } | Layer::Conv2d { weights, bias, .. } = layer {
                if !weights.is_finite() || bias.as_ref().is_some_and(|b| !b.is_finite()) {
                    return Err(Error::InvalidModel(format!(
                        "layer {i} has non-finite parameters"
                    )));
                }
            }
        }
        Ok(Self {
            input_shape,
            layers,
            feature_layer,
            num_classes: shape[0],
            feature_dim,
            seed: None,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn feature_layer(&self) -> usize {
        self.feature_layer
    }

    /// N
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// M
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Seed the weights were initialized and trained with, if known.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Layers between the feature layer and the logits.
    pub fn head(&self) -> &[Layer] {
        &self.layers[self.feature_layer + 1..]
    }

    pub fn forward(&self, input: &Tensor) -> Result<ForwardTrace> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                layer: 0,
                expected: self.input_shape.clone(),
                found: input.shape().to_vec(),
            });
        }
        if !input.is_finite() {
            return Err(Error::NonFinite {
                index: input
                    .values()
                    .iter()
                    .position(|v| !v.is_finite())
                    .unwrap_or(0),
            });
        }
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = outputs.last().unwrap_or(input);
            let y = layer.forward(x);
            outputs.push(y);
        }
        let logits = outputs.last().expect("non-empty").values();
        let confidences = softmax(logits);
        let predicted = argmax(logits);
        Ok(ForwardTrace {
            input: input.clone(),
            outputs,
            confidences,
            predicted,
        })
    }

    /// Feature vector (length M) of a trace, flattened row-major.
    pub fn extract_features(&self, trace: &ForwardTrace) -> Vec<f64> {
        trace.outputs[self.feature_layer].values().to_vec()
    }

    /// Gradient of `logit[target]` with respect to the feature layer output, with ReLU
    /// layers in the head crossed according to `rule`.
    pub fn backward_head(
        &self,
        trace: &ForwardTrace,
        target: usize,
        rule: BackwardRule,
    ) -> Result<Vec<f64>> {
        if target >= self.num_classes {
            return Err(Error::ClassOutOfRange {
                class: target,
                num_classes: self.num_classes,
            });
        }
        let mut grad = vec![0.0; self.num_classes];
        grad[target] = 1.0;
        for i in (self.feature_layer + 1..self.layers.len()).rev() {
            grad = self.layers[i].backward_input(trace.layer_input(i), &grad, rule);
        }
        Ok(grad)
    }
}

/// Everything a forward pass computed for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    input: Tensor,
    outputs: Vec<Tensor>,
    confidences: Vec<f64>,
    predicted: usize,
}

impl ForwardTrace {
    pub fn input(&self) -> &Tensor {
        &self.input
    }

    /// Output (activation) of layer `i`.
    pub fn output(&self, i: usize) -> &Tensor {
        &self.outputs[i]
    }

    /// Input of layer `i`; for a ReLU this is its pre-activation.
    pub fn layer_input(&self, i: usize) -> &Tensor {
        if i == 0 {
            &self.input
        } else {
            &self.outputs[i - 1]
        }
    }

    pub fn logits(&self) -> &[f64] {
        self.outputs.last().expect("non-empty").values()
    }

    /// Softmax of the logits.
    pub fn confidences(&self) -> &[f64] {
        &self.confidences
    }

    /// The black box's winning class.
    pub fn predicted(&self) -> usize {
        self.predicted
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Index of the first maximum.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
