use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Layer, Model};

/// LeNet-shaped default: the ReLU after the 84-unit dense layer is the feature layer.
pub const DEFAULT_ARCH: &str =
    "conv8k5,relu,pool2,conv16k5,relu,pool2,flatten,dense84,relu*,dense10";

/// Compact textual architecture description.
///
/// Comma-separated tokens: `conv<C>k<K>[s<S>]`, `pool<K>[s<S>]`, `dense<N>`, `relu`, `flatten`.
/// Exactly one token carries a trailing `*`, marking the feature layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    tokens: Vec<Token>,
    feature_layer: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Token {
    Conv {
        channels: usize,
        kernel: usize,
        stride: usize,
    },
    Pool {
        size: usize,
        stride: usize,
    },
    Dense(usize),
    Relu,
    Flatten,
}

impl ArchSpec {
    pub fn feature_layer(&self) -> usize {
        self.feature_layer
    }

    /// He-uniform weights and zero biases from a ChaCha8 stream seeded with `seed`.
    pub fn init(&self, input_shape: &[usize], seed: u64) -> Result<Model> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(self.tokens.len());
        for (i, token) in self.tokens.iter().enumerate() {
            let layer = match *token {
                Token::Conv {
                    channels,
                    kernel,
                    stride,
                } => {
                    let &[c, ..] = shape.as_slice() else {
                        return Err(self.error(format!("token {i}: conv needs a [c, h, w] input")));
                    };
                    let fan_in = c * kernel * kernel;
                    Layer::Conv2d {
                        weights: he_uniform(&mut rng, vec![channels, c, kernel, kernel], fan_in),
                        bias: Some(Tensor::zeros(vec![channels])),
                        stride,
                    }
                }
                Token::Dense(out) => {
                    let fan_in = shape.iter().product();
                    Layer::Dense {
                        weights: he_uniform(&mut rng, vec![out, fan_in], fan_in),
                        bias: Some(Tensor::zeros(vec![out])),
                    }
                }
                Token::Pool { size, stride } => Layer::MaxPool { size, stride },
                Token::Relu => Layer::Relu,
                Token::Flatten => Layer::Flatten,
            };
            shape = layer.check_input(i, &shape)?;
            layers.push(layer);
        }
        Ok(Model::new(input_shape.to_vec(), layers, self.feature_layer)?.with_seed(seed))
    }

    fn error(&self, reason: String) -> Error {
        Error::Arch {
            spec: self.to_string(),
            reason,
        }
    }
}

fn he_uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_parts(shape, values)
}

impl Default for ArchSpec {
    fn default() -> Self {
        DEFAULT_ARCH.parse().expect("default architecture parses")
    }
}

impl FromStr for ArchSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let err = |reason: String| Error::Arch {
            spec: s.to_string(),
            reason,
        };
        let mut tokens = Vec::new();
        let mut feature_layer = None;
        for (i, raw) in s.split(',').map(str::trim).enumerate() {
            let (body, marked) = match raw.strip_suffix('*') {
                Some(b) => (b, true),
                None => (raw, false),
            };
            if marked && feature_layer.replace(i).is_some() {
                return Err(err("more than one feature layer marked".into()));
            }
            let token = parse_token(body).ok_or_else(|| err(format!("bad token `{raw}`")))?;
            tokens.push(token);
        }
        let feature_layer =
            feature_layer.ok_or_else(|| err("no feature layer marked with `*`".into()))?;
        Ok(Self {
            tokens,
            feature_layer,
        })
    }
}

fn parse_token(t: &str) -> Option<Token> {
    fn num(s: &str) -> Option<usize> {
        s.parse().ok().filter(|&n| n > 0)
    }
    // "<a>k<b>[s<c>]" for conv, "<a>[s<c>]" for pool
    fn split_stride(s: &str) -> Option<(&str, usize)> {
        match s.split_once('s') {
            Some((head, stride)) => Some((head, num(stride)?)),
            None => Some((s, 1)),
        }
    }
    match t {
        "relu" => Some(Token::Relu),
        "flatten" => Some(Token::Flatten),
        _ => {
            if let Some(rest) = t.strip_prefix("conv") {
                let (head, stride) = split_stride(rest)?;
                let (c, k) = head.split_once('k')?;
                Some(Token::Conv {
                    channels: num(c)?,
                    kernel: num(k)?,
                    stride,
                })
            } else if let Some(rest) = t.strip_prefix("pool") {
                let (size, stride) = match rest.split_once('s') {
                    Some((k, s)) => (num(k)?, num(s)?),
                    None => (num(rest)?, num(rest)?),
                };
                Some(Token::Pool { size, stride })
            } else if let Some(n) = t.strip_prefix("dense") {
                Some(Token::Dense(num(n)?))
            } else {
                None
            }
        }
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            match *t {
                Token::Conv {
                    channels,
                    kernel,
                    stride,
                } => {
                    write!(f, "conv{channels}k{kernel}")?;
                    if stride != 1 {
                        write!(f, "s{stride}")?;
                    }
                }
                Token::Pool { size, stride } => {
                    write!(f, "pool{size}")?;
                    if stride != size {
                        write!(f, "s{stride}")?;
                    }
                }
                Token::Dense(n) => write!(f, "dense{n}")?,
                Token::Relu => f.write_str("relu")?,
                Token::Flatten => f.write_str("flatten")?,
            }
            if i == self.feature_layer {
                f.write_str("*")?;
            }
        }
        Ok(())
    }
}
