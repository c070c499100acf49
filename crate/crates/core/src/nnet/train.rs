use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};

use super::layer::ParamGrads;
use super::{softmax, BackwardRule, Model};

/// Minibatch SGD with classical momentum on softmax cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Learning rate is multiplied by this after every epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            learning_rate: 0.01,
            momentum: 0.9,
            lr_decay: 0.85,
            batch_size: 16,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

pub fn train(
    mut model: Model,
    train_set: &[Sample],
    test_set: Option<&[Sample]>,
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if cfg.epochs == 0
        || cfg.batch_size == 0
        || cfg.learning_rate.is_nan()
        || cfg.learning_rate <= 0.0
    {
        return Err(Error::Config(
            "epochs, batch size and learning rate must be positive".into(),
        ));
    }
    if !(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0) {
        return Err(Error::Config(format!(
            "learning-rate decay {} outside (0, 1]",
            cfg.lr_decay
        )));
    }
    if !(0.0..1.0).contains(&cfg.momentum) {
        return Err(Error::Config(format!(
            "momentum {} outside [0, 1)",
            cfg.momentum
        )));
    }
    let n = model.num_classes();
    if let Some(s) = train_set.iter().find(|s| s.label >= n) {
        return Err(Error::ClassOutOfRange {
            class: s.label,
            num_classes: n,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut velocity: Vec<Option<ParamGrads>> =
        model.layers().iter().map(|l| l.zero_grads()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    let mut lr = cfg.learning_rate;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads: Vec<Option<ParamGrads>> =
                model.layers().iter().map(|l| l.zero_grads()).collect();
            let mut batch_loss = 0.0;
            for &i in idx {
                batch_loss += accumulate_sample(&model, &train_set[i], &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch,
                    loss: batch_loss,
                });
            }
            total_loss += batch_loss;
            let scale = 1.0 / idx.len() as f64;
            for ((layer, g), v) in model.layers_mut().iter_mut().zip(&grads).zip(&mut velocity) {
                let (Some(g), Some(v), Some((w, b))) = (g, v, layer.params_mut()) else {
                    continue;
                };
                step(w, &mut v.weights, &g.weights, scale, lr, cfg.momentum);
                if let Some(b) = b {
                    step(b, &mut v.bias, &g.bias, scale, lr, cfg.momentum);
                }
            }
        }
        epoch_losses.push(total_loss / train_set.len() as f64);
        lr *= cfg.lr_decay;
    }

    let train_accuracy = accuracy(&model, train_set)?;
    let test_accuracy = test_set.map(|t| accuracy(&model, t)).transpose()?;
    Ok((
        model,
        TrainReport {
            epoch_losses,
            train_accuracy,
            test_accuracy,
        },
    ))
}

fn step(
    params: &mut [f64],
    velocity: &mut [f64],
    grad: &[f64],
    scale: f64,
    lr: f64,
    momentum: f64,
) {
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v + g * scale;
        *p -= lr * *v;
    }
}

// Cross-entropy loss of one sample; parameter gradients are added into `grads`.
fn accumulate_sample(
    model: &Model,
    sample: &Sample,
    grads: &mut [Option<ParamGrads>],
) -> Result<f64> {
    let trace = model.forward(&sample.image)?;
    let logits = trace.logits();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[sample.label];
    let p = softmax(logits);
    let mut grad = p;
    grad[sample.label] -= 1.0;
    let layers = model.layers();
    for i in (0..layers.len()).rev() {
        let input = trace.layer_input(i);
        if let Some(g) = grads[i].as_mut() {
            layers[i].accumulate_param_grads(input, &grad, g);
        }
        if i > 0 {
            grad = layers[i].backward_input(input, &grad, BackwardRule::Standard);
        }
    }
    Ok(loss)
}

/// Fraction of samples whose predicted class equals the label.
pub fn accuracy(model: &Model, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    let correct = samples
        .par_iter()
        .map(|s| {
            model
                .forward(&s.image)
                .map(|t| usize::from(t.predicted() == s.label))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::ArchSpec;
    use crate::tensor::Tensor;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let c = if label == 0 { -2.0 } else { 2.0 };
                let x = vec![
                    c + rng.random_range(-1.0..1.0),
                    c + rng.random_range(-1.0..1.0),
                ];
                Sample {
                    image: Tensor::vector(x).unwrap(),
                    label,
                }
            })
            .collect()
    }

    #[test]
    fn separable_blobs_reach_full_accuracy() {
        let arch: ArchSpec = "dense8,relu*,dense2".parse().unwrap();
        let model = arch.init(&[2], 3).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            learning_rate: 0.05,
            momentum: 0.9,
            lr_decay: 1.0,
            batch_size: 8,
            seed: 3,
        };
        let (_, report) = train(model, &blobs(200, 1), Some(&blobs(100, 2)), &cfg).unwrap();
        assert_eq!(report.test_accuracy, Some(1.0));
        assert_eq!(report.train_accuracy, 1.0);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let arch: ArchSpec = "dense6,relu*,dense2".parse().unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let data = blobs(64, 9);
        let (a, _) = train(arch.init(&[2], 5).unwrap(), &data, None, &cfg).unwrap();
        let (b, _) = train(arch.init(&[2], 5).unwrap(), &data, None, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let arch: ArchSpec = "dense6,relu*,dense2".parse().unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 1e12,
            ..TrainConfig::default()
        };
        let err = train(arch.init(&[2], 5).unwrap(), &blobs(64, 9), None, &cfg).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn rejects_bad_labels_and_empty_sets() {
        let model = "dense2*"
            .parse::<ArchSpec>()
            .unwrap()
            .init(&[2], 0)
            .unwrap();
        assert!(matches!(
            train(model.clone(), &[], None, &TrainConfig::default()),
            Err(Error::Empty(_))
        ));
        let bad = vec![Sample {
            image: Tensor::vector(vec![0.0, 0.0]).unwrap(),
            label: 5,
        }];
        assert!(matches!(
            train(model, &bad, None, &TrainConfig::default()),
            Err(Error::ClassOutOfRange { class: 5, .. })
        ));
    }
}
