//! Per-feature importance scores for the winning class.
//!
//! Every method works on the head only: it starts at the winning-class logit and stops
//! at the feature layer, so the result always has length M.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::nnet::{BackwardRule, ForwardTrace, Layer, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Raw,
    Saliency,
    Deconvnet,
    Guided,
    Lrp,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Raw,
        Method::Saliency,
        Method::Deconvnet,
        Method::Guided,
        Method::Lrp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::Saliency => "saliency",
            Method::Deconvnet => "deconvnet",
            Method::Guided => "guided",
            Method::Lrp => "lrp",
        }
    }

    /// The ReLU rule for gradient methods.
    pub fn backward_rule(self) -> Option<BackwardRule> {
        match self {
            Method::Saliency => Some(BackwardRule::Standard),
            Method::Deconvnet => Some(BackwardRule::PositiveGradOnly),
            Method::Guided => Some(BackwardRule::BothMasks),
            Method::Raw | Method::Lrp => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method `{s}` (raw|saliency|deconvnet|guided|lrp)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrpConfig {
    epsilon: f64,
}

impl LrpConfig {
    pub const DEFAULT_EPSILON: f64 = 1e-2;

    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "LRP epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl Default for LrpConfig {
    fn default() -> Self {
        Self {
            epsilon: Self::DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub method: Method,
    pub target_class: usize,
    pub values: Vec<f64>,
}

/// The feature values themselves, used as a baseline.
pub fn raw_importance(features: &[f64], target_class: usize) -> ImportanceVector {
    ImportanceVector {
        method: Method::Raw,
        target_class,
        values: features.to_vec(),
    }
}

fn gradient(model: &Model, trace: &ForwardTrace, method: Method) -> Result<ImportanceVector> {
    let rule = method.backward_rule().expect("gradient method");
    Ok(ImportanceVector {
        method,
        target_class: trace.predicted(),
        values: model.backward_head(trace, trace.predicted(), rule)?,
    })
}

/// Plain gradient of the winning logit.
pub fn saliency(model: &Model, trace: &ForwardTrace) -> Result<ImportanceVector> {
    gradient(model, trace, Method::Saliency)
}

/// Gradient where ReLUs pass only positive upstream gradient.
pub fn deconvnet(model: &Model, trace: &ForwardTrace) -> Result<ImportanceVector> {
    gradient(model, trace, Method::Deconvnet)
}

/// Gradient where ReLUs require a positive pre-activation and a positive upstream gradient.
pub fn guided_backprop(model: &Model, trace: &ForwardTrace) -> Result<ImportanceVector> {
    gradient(model, trace, Method::Guided)
}

pub fn lrp_epsilon(
    model: &Model,
    trace: &ForwardTrace,
    cfg: &LrpConfig,
) -> Result<ImportanceVector> {
    lrp_epsilon_with_gap(model, trace, cfg).map(|(iv, _)| iv)
}

/// LRP-ε relevances plus the conservation gap `logit[target] - Σ R_i`: the relevance
/// absorbed by biases and the stabilizer.
///
/// `R_j = Σ_k a_j w_kj / (z_k + ε·sign(z_k)) · R_k` with `sign(0) = +1`; ReLUs pass
/// relevance where the unit was active.
pub fn lrp_epsilon_with_gap(
    model: &Model,
    trace: &ForwardTrace,
    cfg: &LrpConfig,
) -> Result<(ImportanceVector, f64)> {
    let target = trace.predicted();
    let start = trace.logits()[target];
    let mut relevance = vec![0.0; model.num_classes()];
    relevance[target] = start;
    let eps = cfg.epsilon();
    for i in (model.feature_layer() + 1..model.layers().len()).rev() {
        let input = trace.layer_input(i).values();
        relevance = match &model.layers()[i] {
            Layer::Dense { weights, .. } => {
                let z = trace.output(i).values();
                let inp = input.len();
                let w = weights.values();
                let mut r = vec![0.0; inp];
                for (k, &rk) in relevance.iter().enumerate() {
                    if rk == 0.0 {
                        continue;
                    }
                    let denom = z[k] + if z[k] >= 0.0 { eps } else { -eps };
                    let s = rk / denom;
                    let row = &w[k * inp..(k + 1) * inp];
                    for ((rj, &aj), &wkj) in r.iter_mut().zip(input).zip(row) {
                        *rj += aj * wkj * s;
                    }
                }
                r
            }
            Layer::Relu => relevance
                .iter()
                .zip(input)
                .map(|(&r, &pre)| if pre > 0.0 { r } else { 0.0 })
                .collect(),
            Layer::Flatten => relevance,
            other => {
                return Err(Error::UnsupportedLayer {
                    layer: i,
                    kind: other.kind(),
                    what: "LRP-epsilon",
                })
            }
        };
    }
    let gap = start - relevance.iter().sum::<f64>();
    Ok((
        ImportanceVector {
            method: Method::Lrp,
            target_class: target,
            values: relevance,
        },
        gap,
    ))
}

pub fn attribute(
    model: &Model,
    trace: &ForwardTrace,
    method: Method,
    lrp: &LrpConfig,
) -> Result<ImportanceVector> {
    match method {
        Method::Raw => Ok(raw_importance(
            &model.extract_features(trace),
            trace.predicted(),
        )),
        Method::Saliency | Method::Deconvnet | Method::Guided => gradient(model, trace, method),
        Method::Lrp => lrp_epsilon(model, trace, lrp),
    }
}

/// One forward pass per sample, then every requested method. Output is indexed
/// `[sample][method]` in input order.
pub fn attribute_batch(
    model: &Model,
    samples: &[Sample],
    methods: &[Method],
    lrp: &LrpConfig,
) -> Result<Vec<Vec<ImportanceVector>>> {
    samples
        .par_iter()
        .map(|s| {
            let trace = model.forward(&s.image)?;
            methods
                .iter()
                .map(|&m| attribute(model, &trace, m, lrp))
                .collect()
        })
        .collect()
}

/// One line of the batch attribution file.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionRecord {
    pub sample_id: usize,
    pub importance: ImportanceVector,
}

const RECORDS_HEADER: &str = "# zadex attributions v1: sample_id method target values...";

/// Tab-separated `sample_id, method, target class, values`; values are space-separated
/// and printed in shortest round-trip form.
pub fn write_records<'a, W: Write>(
    mut w: W,
    records: impl IntoIterator<Item = &'a AttributionRecord>,
) -> Result<()> {
    writeln!(w, "{RECORDS_HEADER}")?;
    for r in records {
        write!(
            w,
            "{}\t{}\t{}\t",
            r.sample_id, r.importance.method, r.importance.target_class
        )?;
        for (i, v) in r.importance.values.iter().enumerate() {
            if i > 0 {
                w.write_all(b" ")?;
            }
            write!(w, "{v:?}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<AttributionRecord>> {
    let mut out = Vec::new();
    let mut width = None;
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::Parse {
            line: lineno,
            reason,
        };
        let mut fields = line.split('\t');
        let mut next = |name: &str| fields.next().ok_or_else(|| bad(format!("missing {name}")));
        let sample_id = next("sample id")?
            .parse()
            .map_err(|e| bad(format!("sample id: {e}")))?;
        let method = next("method")?
            .parse::<Method>()
            .map_err(|e| bad(e.to_string()))?;
        let target_class = next("target")?
            .parse()
            .map_err(|e| bad(format!("target: {e}")))?;
        let values = next("values")?
            .split(' ')
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("bad importance value".into()))?;
        if *width.get_or_insert(values.len()) != values.len() {
            return Err(bad(format!(
                "expected {} values, found {}",
                width.unwrap(),
                values.len()
            )));
        }
        out.push(AttributionRecord {
            sample_id,
            importance: ImportanceVector {
                method,
                target_class,
                values,
            },
        });
    }
    Ok(out)
}
