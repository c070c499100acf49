//! How often the fuzzy explainer picks the black box's class, and per-sample reports
//! pairing black-box confidence with explainer truth.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{attribute, attribute_batch, ImportanceVector, LrpConfig, Method};
use crate::codebook::{Codebook, CodebookSpec, Explanation, LabelSource};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::fuzzifier::{fuzzify, FuzzConfig};
use crate::nnet::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub method: Method,
    pub dataset: String,
    pub n: usize,
    pub matches: usize,
    /// `matches / n`
    pub p: f64,
    /// Samples whose maximal truth was shared by codewords of different classes.
    pub ties: usize,
    /// Samples the explainer could not classify (degenerate importances).
    pub abstentions: usize,
    pub bb_accuracy: f64,
    pub explainer_accuracy: f64,
}

/// Per-sample outcome of a fidelity run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub blackbox_class: usize,
    pub explainer_class: Option<usize>,
    pub label: usize,
    pub matched: bool,
    pub class_tie: bool,
}

#[derive(Debug, Clone, Copy)]
struct BlackBox {
    class: usize,
    label: usize,
}

fn outcome(
    codebook: &Codebook,
    bb: BlackBox,
    iv: &ImportanceVector,
    fuzz: &FuzzConfig,
) -> Result<SampleOutcome> {
    let f = fuzzify(iv, fuzz)?;
    let (explainer_class, class_tie) = if f.degenerate {
        (None, false)
    } else {
        let e = codebook.classify(&f.truth)?;
        (Some(e.class), e.ties.is_class_tie())
    };
    Ok(SampleOutcome {
        blackbox_class: bb.class,
        explainer_class,
        label: bb.label,
        matched: explainer_class == Some(bb.class),
        class_tie,
    })
}

/// Aggregate per-sample outcomes; `p` is recomputable from the `matched` flags.
pub fn summarize(
    method: Method,
    dataset: &str,
    outcomes: &[SampleOutcome],
) -> Result<FidelityReport> {
    let n = outcomes.len();
    if n == 0 {
        return Err(Error::Empty("test set"));
    }
    let count = |f: &dyn Fn(&SampleOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count();
    let matches = count(&|o| o.matched);
    Ok(FidelityReport {
        method,
        dataset: dataset.to_string(),
        n,
        matches,
        p: matches as f64 / n as f64,
        ties: count(&|o| o.class_tie),
        abstentions: count(&|o| o.explainer_class.is_none()),
        bb_accuracy: count(&|o| o.blackbox_class == o.label) as f64 / n as f64,
        explainer_accuracy: count(&|o| o.explainer_class == Some(o.label)) as f64 / n as f64,
    })
}

fn check_ready(model: &Model, codebook: &Codebook, test_set: &[Sample]) -> Result<()> {
    if test_set.is_empty() {
        return Err(Error::Empty("test set"));
    }
    codebook.check_model(model)?;
    if codebook.is_empty() {
        return Err(Error::Empty("codebook"));
    }
    Ok(())
}

/// Match rate of the explainer against the black box on `test_set`. The attribution
/// method and Δ come from the codebook.
pub fn fidelity(
    model: &Model,
    codebook: &Codebook,
    test_set: &[Sample],
    dataset: &str,
    lrp: &LrpConfig,
) -> Result<(FidelityReport, Vec<SampleOutcome>)> {
    check_ready(model, codebook, test_set)?;
    let spec = codebook.spec();
    let fuzz = spec.fuzz_config()?;
    let outcomes = test_set
        .par_iter()
        .map(|s| {
            let trace = model.forward(&s.image)?;
            let iv = attribute(model, &trace, spec.method, lrp)?;
            let bb = BlackBox {
                class: trace.predicted(),
                label: s.label,
            };
            outcome(codebook, bb, &iv, &fuzz)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((summarize(spec.method, dataset, &outcomes)?, outcomes))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub fuzz: FuzzConfig,
    pub lrp: LrpConfig,
    pub label_source: LabelSource,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            fuzz: FuzzConfig::default(),
            lrp: LrpConfig::default(),
            label_source: LabelSource::Blackbox,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub report: FidelityReport,
    pub codebook: Codebook,
}

/// One codebook and one fidelity report per method. Each sample goes through the black
/// box once; all methods share that forward pass.
pub fn method_sweep(
    model: &Model,
    train_set: &[Sample],
    test_set: &[Sample],
    methods: &[Method],
    dataset: &str,
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if test_set.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let train_iv = attribute_batch(model, train_set, methods, &cfg.lrp)?;
    let test_iv = attribute_batch(model, test_set, methods, &cfg.lrp)?;
    let test_bb: Vec<BlackBox> = test_set
        .iter()
        .zip(&test_iv)
        .map(|(s, ivs)| BlackBox {
            class: ivs.first().map_or(0, |iv| iv.target_class),
            label: s.label,
        })
        .collect();

    methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let spec = CodebookSpec {
                method,
                delta: cfg.fuzz.delta(),
                feature_dim: model.feature_dim(),
                num_classes: model.num_classes(),
                label_source: cfg.label_source,
                keep_all_x: false,
            };
            let items = train_set.iter().zip(&train_iv).map(|(s, ivs)| {
                let iv = &ivs[k];
                let label = match cfg.label_source {
                    LabelSource::Blackbox => iv.target_class,
                    LabelSource::Groundtruth => s.label,
                };
                (label, iv)
            });
            let codebook = Codebook::from_importances(spec, items)?;
            check_ready(model, &codebook, test_set)?;
            let outcomes = test_bb
                .par_iter()
                .zip(&test_iv)
                .map(|(&bb, ivs)| outcome(&codebook, bb, &ivs[k], &cfg.fuzz))
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepRow {
                report: summarize(method, dataset, &outcomes)?,
                codebook,
            })
        })
        .collect()
}

pub const FIDELITY_CSV_HEADER: &str =
    "method,dataset,n,matches,p,ties,abstentions,bb_accuracy,explainer_accuracy";

pub fn write_fidelity_csv<'a, W: Write>(
    mut w: W,
    reports: impl IntoIterator<Item = &'a FidelityReport>,
) -> Result<()> {
    writeln!(w, "{FIDELITY_CSV_HEADER}")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{:?},{},{},{:?},{:?}",
            r.method,
            r.dataset,
            r.n,
            r.matches,
            r.p,
            r.ties,
            r.abstentions,
            r.bb_accuracy,
            r.explainer_accuracy
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Aligned plain-text table of match rates.
pub fn format_table(reports: &[FidelityReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:>6} {:>8} {:>9} {:>5} {:>6} {:>9} {:>9}",
        "method", "n", "matches", "p", "ties", "abst", "bb_acc", "expl_acc"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<10} {:>6} {:>8} {:>8.2}% {:>5} {:>6} {:>8.2}% {:>8.2}%",
            r.method.as_str(),
            r.n,
            r.matches,
            100.0 * r.p,
            r.ties,
            r.abstentions,
            100.0 * r.bb_accuracy,
            100.0 * r.explainer_accuracy
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub feature: usize,
    /// Activation of the feature layer.
    pub value: f64,
    /// Importance `y`.
    pub importance: f64,
    /// Normalized importance `ỹ`.
    pub truth_value: f64,
    pub symbol: char,
    pub truth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub sample_id: usize,
    pub label: Option<usize>,
    pub method: Method,
    pub blackbox_class: usize,
    pub blackbox_confidence: f64,
    pub confidences: Vec<f64>,
    pub explainer_class: Option<usize>,
    pub explainer_truth: Option<f64>,
    pub matched: bool,
    pub degenerate: bool,
    /// Best truth reachable under each class, `None` for classes without codewords.
    pub class_truths: Vec<Option<f64>>,
    /// Best codeword of the black box's class; `None` when that class has no codewords
    /// or the sample is degenerate.
    pub explanation: Option<Explanation>,
    /// Set when `explanation` is absent.
    pub no_explanation: bool,
    /// Rows follow the explanation's codeword, or the sample's own codeword without one.
    pub features: Vec<FeatureRow>,
}

pub fn sample_report(
    model: &Model,
    codebook: &Codebook,
    sample: &Sample,
    sample_id: usize,
    lrp: &LrpConfig,
) -> Result<SampleReport> {
    codebook.check_model(model)?;
    let spec = codebook.spec();
    let fuzz = spec.fuzz_config()?;
    let trace = model.forward(&sample.image)?;
    let features = model.extract_features(&trace);
    let iv = attribute(model, &trace, spec.method, lrp)?;
    let f = fuzzify(&iv, &fuzz)?;
    let m = trace.predicted();

    let (classified, explanation, class_truths) = if f.degenerate || codebook.is_empty() {
        (None, None, vec![None; model.num_classes()])
    } else {
        let c = codebook.classify(&f.truth)?;
        let per_class = (0..model.num_classes())
            .map(|k| match codebook.explain(&f.truth, k) {
                Ok(e) => Ok(Some(e)),
                Err(Error::NoExplanation { .. }) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<Vec<_>>>()?;
        let truths = per_class
            .iter()
            .map(|e| e.as_ref().map(|e| e.truth))
            .collect();
        let expl = per_class
            .into_iter()
            .nth(m)
            .flatten()
            .map(|e| e.with_importance(&iv.values));
        (Some(c), expl, truths)
    };

    let rows = match &explanation {
        Some(e) => e
            .features
            .iter()
            .map(|ft| FeatureRow {
                feature: ft.index,
                value: features[ft.index],
                importance: iv.values[ft.index],
                truth_value: ft.truth_value,
                symbol: ft.symbol,
                truth: ft.truth,
            })
            .collect(),
        None => f
            .codeword
            .symbols()
            .iter()
            .enumerate()
            .map(|(i, s)| FeatureRow {
                feature: i,
                value: features[i],
                importance: iv.values[i],
                truth_value: f.truth.values()[i],
                symbol: s.as_char(),
                truth: None,
            })
            .collect(),
    };

    Ok(SampleReport {
        sample_id,
        label: Some(sample.label),
        method: spec.method,
        blackbox_class: m,
        blackbox_confidence: trace.confidences()[m],
        confidences: trace.confidences().to_vec(),
        explainer_class: classified.as_ref().map(|c| c.class),
        explainer_truth: classified.as_ref().map(|c| c.truth),
        matched: classified.as_ref().is_some_and(|c| c.class == m),
        degenerate: f.degenerate,
        class_truths,
        no_explanation: explanation.is_none(),
        explanation,
        features: rows,
    })
}

pub const FEATURE_CSV_HEADER: &str = "feature,y,y_norm,symbol,truth,value";

/// Flat per-feature rows for bar-chart plotting.
pub fn write_feature_csv<W: Write>(mut w: W, report: &SampleReport) -> Result<()> {
    writeln!(w, "{FEATURE_CSV_HEADER}")?;
    for r in &report.features {
        let truth = r.truth.map(|t| format!("{t:?}")).unwrap_or_default();
        writeln!(
            w,
            "{},{:?},{:?},{},{},{:?}",
            r.feature, r.importance, r.truth_value, r.symbol, truth, r.value
        )?;
    }
    w.flush()?;
    Ok(())
}
