//! Model file: `ZDXMODEL`, a little-endian `u32` version, a length-prefixed JSON header
//! describing the layer chain, then every parameter array as raw little-endian `f64`.
//! Storing the raw bits keeps the round trip exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Layer, Model};

const MAGIC: &[u8; 8] = b"ZDXMODEL";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    input_shape: Vec<usize>,
    feature_layer: usize,
    feature_dim: usize,
    num_classes: usize,
    seed: Option<u64>,
    layers: Vec<LayerHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LayerHeader {
    Dense {
        weights: Vec<usize>,
        bias: bool,
    },
    Conv2d {
        weights: Vec<usize>,
        bias: bool,
        stride: usize,
    },
    Maxpool {
        size: usize,
        stride: usize,
    },
    Relu,
    Flatten,
}

pub fn write_model<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let layers = model
        .layers()
        .iter()
        .map(|l| match l {
            Layer::Dense { weights, bias } => LayerHeader::Dense {
                weights: weights.shape().to_vec(),
                bias: bias.is_some(),
            },
            Layer::Conv2d {
                weights,
                bias,
                stride,
            } => LayerHeader::Conv2d {
                weights: weights.shape().to_vec(),
                bias: bias.is_some(),
                stride: *stride,
            },
            Layer::MaxPool { size, stride } => LayerHeader::Maxpool {
                size: *size,
                stride: *stride,
            },
            Layer::Relu => LayerHeader::Relu,
            Layer::Flatten => LayerHeader::Flatten,
        })
        .collect();
    let header = Header {
        input_shape: model.input_shape().to_vec(),
        feature_layer: model.feature_layer(),
        feature_dim: model.feature_dim(),
        num_classes: model.num_classes(),
        seed: model.seed(),
        layers,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&MODEL_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for layer in model.layers() {
        if let Layer::Dense { weights, bias } | Layer::Conv2d { weights, bias, .. } = layer {
            for t in std::iter::once(weights).chain(bias.as_ref()) {
                for v in t.values() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<Model> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::InvalidModel("not a model file".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Version(version));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;

    let mut read_tensor = |shape: Vec<usize>| -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        Tensor::new(shape, values)
    };
    let mut layers = Vec::with_capacity(header.layers.len());
    for lh in header.layers {
        let layer = match lh {
            LayerHeader::Dense { weights, bias } => {
                let out = weights.first().copied().unwrap_or(0);
                Layer::Dense {
                    weights: read_tensor(weights)?,
                    bias: bias.then(|| read_tensor(vec![out])).transpose()?,
                }
            }
            LayerHeader::Conv2d {
                weights,
                bias,
                stride,
            } => {
                let out = weights.first().copied().unwrap_or(0);
                Layer::Conv2d {
                    weights: read_tensor(weights)?,
                    bias: bias.then(|| read_tensor(vec![out])).transpose()?,
                    stride,
                }
            }
            LayerHeader::Maxpool { size, stride } => Layer::MaxPool { size, stride },
            LayerHeader::Relu => Layer::Relu,
            LayerHeader::Flatten => Layer::Flatten,
        };
        layers.push(layer);
    }
    let mut model = Model::new(header.input_shape, layers, header.feature_layer)?;
    if model.feature_dim() != header.feature_dim {
        return Err(Error::Metadata {
            what: "feature dimension M",
            declared: header.feature_dim.to_string(),
            found: model.feature_dim().to_string(),
        });
    }
    if model.num_classes() != header.num_classes {
        return Err(Error::Metadata {
            what: "class count N",
            declared: header.num_classes.to_string(),
            found: model.num_classes().to_string(),
        });
    }
    if let Some(seed) = header.seed {
        model = model.with_seed(seed);
    }
    Ok(model)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    write_model(model, BufWriter::new(File::create(path)?))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    read_model(BufReader::new(File::open(path)?))
}
