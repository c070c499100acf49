#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use zadex::{Layer, Model, Sample, Tensor};

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn dense(
    rng: &mut ChaCha8Rng,
    inputs: usize,
    outputs: usize,
    range: (f64, f64),
    bias: bool,
) -> Layer {
    Layer::Dense {
        weights: Tensor::new(
            vec![outputs, inputs],
            uniform(rng, inputs * outputs, range.0, range.1),
        )
        .unwrap(),
        bias: bias
            .then(|| Tensor::new(vec![outputs], uniform(rng, outputs, range.0, range.1)).unwrap()),
    }
}

/// Head-only model: the input is the feature vector itself, followed by dense/ReLU
/// blocks of the given widths and a dense output layer.
pub fn random_head(
    rng: &mut ChaCha8Rng,
    m: usize,
    hidden: &[usize],
    n: usize,
    range: (f64, f64),
    bias: bool,
) -> Model {
    let mut layers = vec![Layer::Flatten];
    let mut width = m;
    for &h in hidden {
        layers.push(dense(rng, width, h, range, bias));
        layers.push(Layer::Relu);
        width = h;
    }
    layers.push(dense(rng, width, n, range, bias));
    Model::new(vec![m], layers, 0).unwrap()
}

pub fn input(values: Vec<f64>) -> Tensor {
    Tensor::vector(values).unwrap()
}

/// Random `[1, 8, 8]` images with random labels.
pub fn random_images(rng: &mut ChaCha8Rng, count: usize, classes: usize) -> Vec<Sample> {
    (0..count)
        .map(|_| Sample {
            image: Tensor::new(vec![1, 8, 8], uniform(rng, 64, 0.0, 1.0)).unwrap(),
            label: rng.random_range(0..classes),
        })
        .collect()
}

pub const SMALL_CNN: &str = "conv3k3,relu,pool2,flatten,dense7,relu*,dense4";
