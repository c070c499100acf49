use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::BackwardRule;

/// One stage of a feedforward network.
///
/// Dense weights are `[out, in]`; convolution weights are
/// `[out_channels, in_channels, kernel, kernel]` and operate on `[channels, height, width]`
/// inputs without padding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Dense {
        weights: Tensor,
        bias: Option<Tensor>,
    },
    Conv2d {
        weights: Tensor,
        bias: Option<Tensor>,
        stride: usize,
    },
    MaxPool {
        size: usize,
        stride: usize,
    },
    Relu,
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::MaxPool { .. } => "maxpool",
            Layer::Relu => "relu",
            Layer::Flatten => "flatten",
        }
    }

    pub fn dense(weights: Tensor, bias: Option<Tensor>) -> Self {
        Layer::Dense { weights, bias }
    }

    /// Shape produced for `input`, or `None` when the layer cannot accept it.
    pub fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        match self {
            Layer::Dense { weights, bias } => {
                let &[out, inp] = weights.shape() else {
                    return None;
                };
                if input != [inp] || bias.as_ref().is_some_and(|b| b.shape() != [out]) {
                    return None;
                }
                Some(vec![out])
            }
            Layer::Conv2d {
                weights,
                bias,
                stride,
            } => {
                let &[oc, ic, k, k2] = weights.shape() else {
                    return None;
                };
                let &[c, h, w] = input else {
                    return None;
                };
                if k != k2 || c != ic || h < k || w < k || *stride == 0 {
                    return None;
                }
                if bias.as_ref().is_some_and(|b| b.shape() != [oc]) {
                    return None;
                }
                Some(vec![oc, (h - k) / stride + 1, (w - k) / stride + 1])
            }
            Layer::MaxPool { size, stride } => {
                let &[c, h, w] = input else {
                    return None;
                };
                if *size == 0 || *stride == 0 || h < *size || w < *size {
                    return None;
                }
                Some(vec![c, (h - size) / stride + 1, (w - size) / stride + 1])
            }
            Layer::Relu => Some(input.to_vec()),
            Layer::Flatten => Some(vec![input.iter().product()]),
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Layer::Dense { weights, bias } | Layer::Conv2d { weights, bias, .. } => {
                weights.len() + bias.as_ref().map_or(0, Tensor::len)
            }
            _ => 0,
        }
    }

    /// Forward pass; `input` must already be shape-checked.
    pub(crate) fn forward(&self, input: &Tensor) -> Tensor {
        match self {
            Layer::Dense { weights, bias } => {
                let &[out, inp] = weights.shape() else {
                    unreachable!()
                };
                let w = weights.values();
                let x = input.values();
                let mut y = match bias {
                    Some(b) => b.values().to_vec(),
                    None => vec![0.0; out],
                };
                for (k, yk) in y.iter_mut().enumerate() {
                    let row = &w[k * inp..(k + 1) * inp];
                    *yk += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
                Tensor::from_parts(vec![out], y)
            }
            Layer::Conv2d {
                weights,
                bias,
                stride,
            } => conv_forward(input, weights, bias.as_ref(), *stride),
            Layer::MaxPool { size, stride } => {
                let shape = self.output_shape(input.shape()).expect("checked shape");
                let (c, oh, ow) = (shape[0], shape[1], shape[2]);
                let (h, w) = (input.shape()[1], input.shape()[2]);
                let x = input.values();
                let mut y = Vec::with_capacity(c * oh * ow);
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let idx = pool_argmax(x, ch, h, w, oy * stride, ox * stride, *size);
                            y.push(x[idx]);
                        }
                    }
                }
                Tensor::from_parts(shape, y)
            }
            Layer::Relu => Tensor::from_parts(
                input.shape().to_vec(),
                input.values().iter().map(|&v| v.max(0.0)).collect(),
            ),
            Layer::Flatten => Tensor::from_parts(vec![input.len()], input.values().to_vec()),
        }
    }

    /// Gradient with respect to the layer input, given the gradient at its output.
    ///
    /// `rule` only changes the ReLU step; every other layer uses its exact derivative.
    pub(crate) fn backward_input(
        &self,
        input: &Tensor,
        grad_out: &[f64],
        rule: BackwardRule,
    ) -> Vec<f64> {
        match self {
            Layer::Dense { weights, .. } => {
                let inp = weights.shape()[1];
                let w = weights.values();
                let mut g = vec![0.0; inp];
                for (k, &gk) in grad_out.iter().enumerate() {
                    if gk == 0.0 {
                        continue;
                    }
                    let row = &w[k * inp..(k + 1) * inp];
                    for (gj, &wkj) in g.iter_mut().zip(row) {
                        *gj += wkj * gk;
                    }
                }
                g
            }
            Layer::Conv2d {
                weights, stride, ..
            } => conv_backward_input(input, weights, *stride, grad_out),
            Layer::MaxPool { size, stride } => {
                let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
                let oh = (h - size) / stride + 1;
                let ow = (w - size) / stride + 1;
                let x = input.values();
                let mut g = vec![0.0; x.len()];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let idx = pool_argmax(x, ch, h, w, oy * stride, ox * stride, *size);
                            g[idx] += grad_out[(ch * oh + oy) * ow + ox];
                        }
                    }
                }
                g
            }
            Layer::Relu => input
                .values()
                .iter()
                .zip(grad_out)
                .map(|(&pre, &g)| if rule.passes(pre, g) { g } else { 0.0 })
                .collect(),
            Layer::Flatten => grad_out.to_vec(),
        }
    }

    /// Adds this sample's parameter gradient into `grads` (weights then bias).
    pub(crate) fn accumulate_param_grads(
        &self,
        input: &Tensor,
        grad_out: &[f64],
        grads: &mut ParamGrads,
    ) {
        match self {
            Layer::Dense { weights, bias } => {
                let inp = weights.shape()[1];
                let x = input.values();
                for (k, &gk) in grad_out.iter().enumerate() {
                    if gk == 0.0 {
                        continue;
                    }
                    let row = &mut grads.weights[k * inp..(k + 1) * inp];
                    for (d, &xj) in row.iter_mut().zip(x) {
                        *d += gk * xj;
                    }
                }
                if bias.is_some() {
                    for (d, &g) in grads.bias.iter_mut().zip(grad_out) {
                        *d += g;
                    }
                }
            }
            Layer::Conv2d {
                weights,
                bias,
                stride,
            } => {
                conv_param_grads(input, weights, *stride, grad_out, &mut grads.weights);
                if bias.is_some() {
                    let per = grad_out.len() / grads.bias.len();
                    for (o, d) in grads.bias.iter_mut().enumerate() {
                        *d += grad_out[o * per..(o + 1) * per].iter().sum::<f64>();
                    }
                }
            }
            _ => {}
        }
    }

    pub(crate) fn params_mut(&mut self) -> Option<(&mut [f64], Option<&mut [f64]>)> {
        match self {
            Layer::Dense { weights, bias } | Layer::Conv2d { weights, bias, .. } => {
                Some((weights.values_mut(), bias.as_mut().map(|b| b.values_mut())))
            }
            _ => None,
        }
    }

    pub(crate) fn zero_grads(&self) -> Option<ParamGrads> {
        match self {
            Layer::Dense { weights, bias } | Layer::Conv2d { weights, bias, .. } => {
                Some(ParamGrads {
                    weights: vec![0.0; weights.len()],
                    bias: vec![0.0; bias.as_ref().map_or(0, Tensor::len)],
                })
            }
            _ => None,
        }
    }

    pub(crate) fn check_input(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        self.output_shape(input)
            .ok_or_else(|| Error::ShapeMismatch {
                layer: index,
                expected: self.expected_input(input),
                found: input.to_vec(),
            })
    }

    // Best-effort description of what the layer wanted, for error messages.
    fn expected_input(&self, found: &[usize]) -> Vec<usize> {
        match self {
            Layer::Dense { weights, .. } => vec![weights.shape()[1]],
            Layer::Conv2d { weights, .. } => {
                let mut s = vec![weights.shape()[1]];
                s.extend(found.iter().skip(1).copied());
                s
            }
            _ => found.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParamGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

// First maximal element of the window in row-major order.
fn pool_argmax(
    x: &[f64],
    ch: usize,
    h: usize,
    w: usize,
    y0: usize,
    x0: usize,
    size: usize,
) -> usize {
    let mut best = (ch * h + y0) * w + x0;
    for dy in 0..size {
        let row = (ch * h + y0 + dy) * w + x0;
        for dx in 0..size {
            if x[row + dx] > x[best] {
                best = row + dx;
            }
        }
    }
    best
}

fn conv_dims(input: &Tensor, weights: &Tensor, stride: usize) -> [usize; 7] {
    let s = weights.shape();
    let (oc, ic, k) = (s[0], s[1], s[2]);
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    [oc, ic, k, h, w, oh, ow]
}

fn conv_forward(input: &Tensor, weights: &Tensor, bias: Option<&Tensor>, stride: usize) -> Tensor {
    let [oc, ic, k, h, w, oh, ow] = conv_dims(input, weights, stride);
    let x = input.values();
    let wv = weights.values();
    let mut y = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        let out = &mut y[o * oh * ow..(o + 1) * oh * ow];
        if let Some(b) = bias {
            out.fill(b.values()[o]);
        }
        for c in 0..ic {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wt = wv[((o * ic + c) * k + ky) * k + kx];
                    for oy in 0..oh {
                        let src = &plane[(oy * stride + ky) * w + kx..];
                        let dst = &mut out[oy * ow..(oy + 1) * ow];
                        if stride == 1 {
                            for (d, &s) in dst.iter_mut().zip(&src[..ow]) {
                                *d += wt * s;
                            }
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d += wt * src[ox * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(vec![oc, oh, ow], y)
}

fn conv_backward_input(
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
    grad_out: &[f64],
) -> Vec<f64> {
    let [oc, ic, k, h, w, oh, ow] = conv_dims(input, weights, stride);
    let wv = weights.values();
    let mut g = vec![0.0; ic * h * w];
    for o in 0..oc {
        let go = &grad_out[o * oh * ow..(o + 1) * oh * ow];
        for c in 0..ic {
            let plane = &mut g[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wt = wv[((o * ic + c) * k + ky) * k + kx];
                    for oy in 0..oh {
                        let row = &go[oy * ow..(oy + 1) * ow];
                        let base = (oy * stride + ky) * w + kx;
                        for (ox, &gv) in row.iter().enumerate() {
                            plane[base + ox * stride] += wt * gv;
                        }
                    }
                }
            }
        }
    }
    g
}

fn conv_param_grads(
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
    grad_out: &[f64],
    dw: &mut [f64],
) {
    let [oc, ic, k, h, w, oh, ow] = conv_dims(input, weights, stride);
    let x = input.values();
    for o in 0..oc {
        let go = &grad_out[o * oh * ow..(o + 1) * oh * ow];
        for c in 0..ic {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let row = &go[oy * ow..(oy + 1) * ow];
                        let base = (oy * stride + ky) * w + kx;
                        for (ox, &gv) in row.iter().enumerate() {
                            acc += gv * plane[base + ox * stride];
                        }
                    }
                    dw[((o * ic + c) * k + ky) * k + kx] += acc;
                }
            }
        }
    }
}
