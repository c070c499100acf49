//! Per-class sets of the codewords observed on the training set, and the fuzzy classifier
//! built on them.
//!
//! Classification takes the stored codeword with the highest truth (minimum over its
//! non-`X` coordinates) and answers with its class. Ties are broken by, in order: more
//! non-`X` symbols, lower class index, lexicographically smaller codeword (`0 < X < 1`).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{attribute, ImportanceVector, LrpConfig, Method};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::fuzzifier::{
    fuzzify, symbol_truth, Codeword, FuzzConfig, Fuzzified, Symbol, TruthVector,
};
use crate::nnet::Model;

pub const CODEBOOK_FORMAT_VERSION: u32 = 1;

/// Which label a training codeword is filed under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    /// The black box's own prediction.
    Blackbox,
    Groundtruth,
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelSource::Blackbox => "blackbox",
            LabelSource::Groundtruth => "groundtruth",
        })
    }
}

impl FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "blackbox" => Ok(LabelSource::Blackbox),
            "groundtruth" => Ok(LabelSource::Groundtruth),
            other => Err(Error::Config(format!(
                "unknown label source `{other}` (blackbox|groundtruth)"
            ))),
        }
    }
}

/// Settings fixed at build time. Two codebooks can only be merged if these agree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodebookSpec {
    pub method: Method,
    pub delta: f64,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub label_source: LabelSource,
    pub keep_all_x: bool,
}

impl CodebookSpec {
    pub fn for_model(model: &Model, method: Method, fuzz: &FuzzConfig) -> Self {
        Self {
            method,
            delta: fuzz.delta(),
            feature_dim: model.feature_dim(),
            num_classes: model.num_classes(),
            label_source: LabelSource::Blackbox,
            keep_all_x: false,
        }
    }

    pub fn with_label_source(self, label_source: LabelSource) -> Self {
        Self {
            label_source,
            ..self
        }
    }

    pub fn fuzz_config(&self) -> Result<FuzzConfig> {
        FuzzConfig::new(self.delta)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildCounters {
    /// Training samples offered to the codebook.
    pub samples: u64,
    pub skipped_all_x: u64,
    pub skipped_degenerate: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    spec: CodebookSpec,
    counters: BuildCounters,
    classes: Vec<BTreeMap<Codeword, u64>>,
}

/// How many candidates shared the maximal truth value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TieReport {
    pub codewords: usize,
    pub classes: usize,
}

impl TieReport {
    /// The maximal truth was reached under more than one class.
    pub fn is_class_tie(&self) -> bool {
        self.classes > 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTruth {
    pub index: usize,
    /// Importance before normalization, when known.
    pub importance: Option<f64>,
    pub truth_value: f64,
    pub symbol: char,
    /// Truth of the coordinate statement; absent for `X`.
    pub truth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub class: usize,
    pub codeword: String,
    pub truth: f64,
    pub features: Vec<FeatureTruth>,
    pub ties: TieReport,
}

impl Explanation {
    fn new(class: usize, codeword: &Codeword, truth: &TruthVector, ties: TieReport) -> Self {
        let features: Vec<FeatureTruth> = truth
            .values()
            .iter()
            .zip(codeword.symbols())
            .enumerate()
            .map(|(index, (&v, &s))| FeatureTruth {
                index,
                importance: None,
                truth_value: v,
                symbol: s.as_char(),
                truth: (s != Symbol::X).then(|| symbol_truth(v, s)),
            })
            .collect();
        let t = features.iter().filter_map(|f| f.truth).fold(1.0, f64::min);
        Self {
            class,
            codeword: codeword.to_string(),
            truth: t,
            features,
            ties,
        }
    }

    /// Attach the raw importances the truth vector was normalized from.
    pub fn with_importance(mut self, importance: &[f64]) -> Self {
        for (f, &y) in self.features.iter_mut().zip(importance) {
            f.importance = Some(y);
        }
        self
    }

    /// Features that are part of the explanation (non-`X`).
    pub fn relevant(&self) -> impl Iterator<Item = &FeatureTruth> {
        self.features.iter().filter(|f| f.truth.is_some())
    }
}

/// Distinct codewords filed under more than one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionStats {
    pub colliding_codewords: usize,
    /// Observations of colliding codewords, summed over classes.
    pub colliding_observations: u64,
}

impl Codebook {
    pub fn new(spec: CodebookSpec) -> Result<Self> {
        FuzzConfig::new(spec.delta)?;
        if spec.feature_dim == 0 || spec.num_classes == 0 {
            return Err(Error::Config("codebook needs M > 0 and N > 0".into()));
        }
        Ok(Self {
            spec,
            counters: BuildCounters::default(),
            classes: vec![BTreeMap::new(); spec.num_classes],
        })
    }

    pub fn spec(&self) -> &CodebookSpec {
        &self.spec
    }

    pub fn counters(&self) -> &BuildCounters {
        &self.counters
    }

    pub fn class(&self, class: usize) -> Option<&BTreeMap<Codeword, u64>> {
        self.classes.get(class)
    }

    pub fn len(&self) -> usize {
        self.classes.iter().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        self.classes.iter().map(BTreeMap::len).collect()
    }

    pub fn collisions(&self) -> CollisionStats {
        let mut seen: HashMap<&Codeword, (usize, u64)> = HashMap::new();
        for set in &self.classes {
            for (cw, &n) in set {
                let e = seen.entry(cw).or_default();
                e.0 += 1;
                e.1 += n;
            }
        }
        seen.values().filter(|(classes, _)| *classes > 1).fold(
            CollisionStats::default(),
            |mut acc, &(_, n)| {
                acc.colliding_codewords += 1;
                acc.colliding_observations += n;
                acc
            },
        )
    }

    /// File one training observation. Returns whether the codeword was stored.
    pub fn observe(&mut self, label: usize, f: &Fuzzified) -> Result<bool> {
        if label >= self.spec.num_classes {
            return Err(Error::ClassOutOfRange {
                class: label,
                num_classes: self.spec.num_classes,
            });
        }
        if f.codeword.len() != self.spec.feature_dim {
            return Err(Error::LengthMismatch {
                expected: self.spec.feature_dim,
                found: f.codeword.len(),
            });
        }
        self.counters.samples += 1;
        if f.degenerate {
            self.counters.skipped_degenerate += 1;
            return Ok(false);
        }
        if f.codeword.is_all_x() && !self.spec.keep_all_x {
            self.counters.skipped_all_x += 1;
            return Ok(false);
        }
        *self.classes[label].entry(f.codeword.clone()).or_insert(0) += 1;
        Ok(true)
    }

    /// Per-class set union with summed counters.
    pub fn merge(&mut self, other: Codebook) -> Result<()> {
        if other.spec != self.spec {
            return Err(Error::Metadata {
                what: "codebook settings",
                declared: format!("{:?}", self.spec),
                found: format!("{:?}", other.spec),
            });
        }
        self.counters.samples += other.counters.samples;
        self.counters.skipped_all_x += other.counters.skipped_all_x;
        self.counters.skipped_degenerate += other.counters.skipped_degenerate;
        for (mine, theirs) in self.classes.iter_mut().zip(other.classes) {
            for (cw, n) in theirs {
                *mine.entry(cw).or_insert(0) += n;
            }
        }
        Ok(())
    }

    /// Codebook from importances already computed, labeled `(label, importance)`.
    pub fn from_importances<'a>(
        spec: CodebookSpec,
        items: impl IntoIterator<Item = (usize, &'a ImportanceVector)>,
    ) -> Result<Self> {
        let fuzz = spec.fuzz_config()?;
        let mut book = Codebook::new(spec)?;
        for (label, iv) in items {
            if iv.method != spec.method {
                return Err(Error::Metadata {
                    what: "attribution method",
                    declared: spec.method.to_string(),
                    found: iv.method.to_string(),
                });
            }
            book.observe(label, &fuzzify(iv, &fuzz)?)?;
        }
        if book.counters.samples == 0 {
            return Err(Error::Empty("training set"));
        }
        Ok(book)
    }

    /// Run every training sample through the black box, attribute toward its winning
    /// class, fuzzify, and file the codeword. Samples are processed in parallel shards
    /// that are merged at the end.
    pub fn build(
        model: &Model,
        train_set: &[Sample],
        spec: CodebookSpec,
        lrp: &LrpConfig,
    ) -> Result<Self> {
        if train_set.is_empty() {
            return Err(Error::Empty("training set"));
        }
        if spec.feature_dim != model.feature_dim() || spec.num_classes != model.num_classes() {
            return Err(Error::Metadata {
                what: "model shape (M, N)",
                declared: format!("({}, {})", spec.feature_dim, spec.num_classes),
                found: format!("({}, {})", model.feature_dim(), model.num_classes()),
            });
        }
        let fuzz = spec.fuzz_config()?;
        Codebook::new(spec)?;
        train_set
            .par_iter()
            .try_fold(
                || Codebook::new(spec).expect("validated spec"),
                |mut book, s| {
                    let trace = model.forward(&s.image)?;
                    let iv = attribute(model, &trace, spec.method, lrp)?;
                    let label = match spec.label_source {
                        LabelSource::Blackbox => trace.predicted(),
                        LabelSource::Groundtruth => s.label,
                    };
                    book.observe(label, &fuzzify(&iv, &fuzz)?)?;
                    Ok::<_, Error>(book)
                },
            )
            .try_reduce(
                || Codebook::new(spec).expect("validated spec"),
                |mut a, b| {
                    a.merge(b)?;
                    Ok(a)
                },
            )
    }

    fn check_truth(&self, truth: &TruthVector) -> Result<()> {
        if truth.len() != self.spec.feature_dim {
            return Err(Error::LengthMismatch {
                expected: self.spec.feature_dim,
                found: truth.len(),
            });
        }
        Ok(())
    }

    /// Explainable classification over every stored codeword.
    pub fn classify(&self, truth: &TruthVector) -> Result<Explanation> {
        self.check_truth(truth)?;
        let best = self
            .search(truth, 0..self.classes.len())
            .ok_or(Error::Empty("codebook"))?;
        Ok(best.into_explanation(truth))
    }

    /// Best codeword of one class, for explaining a decision already taken.
    pub fn explain(&self, truth: &TruthVector, class: usize) -> Result<Explanation> {
        self.check_truth(truth)?;
        if class >= self.classes.len() {
            return Err(Error::ClassOutOfRange {
                class,
                num_classes: self.classes.len(),
            });
        }
        let best = self
            .search(truth, class..class + 1)
            .ok_or(Error::NoExplanation { class })?;
        Ok(best.into_explanation(truth))
    }

    fn search(&self, truth: &TruthVector, classes: std::ops::Range<usize>) -> Option<Best<'_>> {
        let y = truth.values();
        let mut best: Option<Best> = None;
        for class in classes {
            for cw in self.classes[class].keys() {
                // Anything strictly below the current best cannot win or tie.
                let floor = best.as_ref().map_or(f64::NEG_INFINITY, |b| b.truth);
                let Some(t) = bounded_min(y, cw.symbols(), floor) else {
                    continue;
                };
                match &mut best {
                    None => best = Some(Best::new(class, cw, t)),
                    Some(b) if t > b.truth => *b = Best::new(class, cw, t),
                    Some(b) => {
                        // t == b.truth
                        b.tied += 1;
                        if b.last_tied_class != class {
                            b.tied_classes += 1;
                            b.last_tied_class = class;
                        }
                        let spec = cw.specificity();
                        if spec > b.specificity {
                            b.class = class;
                            b.codeword = cw;
                            b.specificity = spec;
                        }
                    }
                }
            }
        }
        best
    }
}

struct Best<'a> {
    class: usize,
    codeword: &'a Codeword,
    truth: f64,
    specificity: usize,
    tied: usize,
    tied_classes: usize,
    last_tied_class: usize,
}

impl<'a> Best<'a> {
    fn new(class: usize, codeword: &'a Codeword, truth: f64) -> Self {
        Self {
            class,
            codeword,
            truth,
            specificity: codeword.specificity(),
            tied: 1,
            tied_classes: 1,
            last_tied_class: class,
        }
    }

    fn into_explanation(self, truth: &TruthVector) -> Explanation {
        let ties = TieReport {
            codewords: self.tied,
            classes: self.tied_classes,
        };
        Explanation::new(self.class, self.codeword, truth, ties)
    }
}

// Minimum truth over non-X coordinates, or None as soon as it drops below `floor`.
#[inline]
fn bounded_min(y: &[f64], symbols: &[Symbol], floor: f64) -> Option<f64> {
    let mut m = 1.0_f64;
    for (&v, &s) in y.iter().zip(symbols) {
        let t = match s {
            Symbol::One => v,
            Symbol::Zero => 1.0 - v,
            Symbol::X => continue,
        };
        if t < m {
            m = t;
            if m < floor {
                return None;
            }
        }
    }
    Some(m)
}

// ---- file format ----

const MAGIC: &str = "zadex-codebook";

impl Codebook {
    /// Line-oriented text: `key value` header lines, then `class codeword count` records
    /// sorted by class and codeword.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let s = &self.spec;
        let c = &self.counters;
        let col = self.collisions();
        writeln!(w, "{MAGIC} {CODEBOOK_FORMAT_VERSION}")?;
        writeln!(w, "method {}", s.method)?;
        writeln!(w, "delta {:?}", s.delta)?;
        writeln!(w, "m {}", s.feature_dim)?;
        writeln!(w, "n {}", s.num_classes)?;
        writeln!(w, "labels {}", s.label_source)?;
        writeln!(w, "keep_all_x {}", s.keep_all_x)?;
        writeln!(w, "samples {}", c.samples)?;
        writeln!(w, "skipped_all_x {}", c.skipped_all_x)?;
        writeln!(w, "skipped_degenerate {}", c.skipped_degenerate)?;
        writeln!(
            w,
            "collisions {} {}",
            col.colliding_codewords, col.colliding_observations
        )?;
        writeln!(w, "records {}", self.len())?;
        for (class, set) in self.classes.iter().enumerate() {
            for (cw, n) in set {
                writeln!(w, "{class} {cw} {n}")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |key: &'static str| -> Result<(usize, String)> {
            let (no, line) = lines.next().ok_or(Error::Parse {
                line: 0,
                reason: format!("missing `{key}` line"),
            })?;
            let line = line?;
            let value = line
                .strip_prefix(key)
                .and_then(|v| v.strip_prefix(' '))
                .ok_or_else(|| Error::Parse {
                    line: no,
                    reason: format!("expected `{key} ...`, found `{line}`"),
                })?;
            Ok((no, value.to_string()))
        };
        fn parse<T: FromStr>((line, v): (usize, String)) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            v.parse().map_err(|e: T::Err| Error::Parse {
                line,
                reason: e.to_string(),
            })
        }

        let version: u32 = parse(next(MAGIC)?)?;
        if version != CODEBOOK_FORMAT_VERSION {
            return Err(Error::Version(version));
        }
        let method: Method = parse(next("method")?)?;
        let delta: f64 = parse(next("delta")?)?;
        let feature_dim: usize = parse(next("m")?)?;
        let num_classes: usize = parse(next("n")?)?;
        let label_source: LabelSource = parse(next("labels")?)?;
        let keep_all_x: bool = parse(next("keep_all_x")?)?;
        let counters = BuildCounters {
            samples: parse(next("samples")?)?,
            skipped_all_x: parse(next("skipped_all_x")?)?,
            skipped_degenerate: parse(next("skipped_degenerate")?)?,
        };
        let (col_line, col_text) = next("collisions")?;
        let records: usize = parse(next("records")?)?;

        let mut book = Codebook::new(CodebookSpec {
            method,
            delta,
            feature_dim,
            num_classes,
            label_source,
            keep_all_x,
        })?;
        book.counters = counters;
        let mut seen = 0;
        for (no, line) in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| Error::Parse { line: no, reason };
            let mut parts = line.split(' ');
            let (Some(class), Some(cw), Some(count), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad("expected `class codeword count`".into()));
            };
            let class: usize = class.parse().map_err(|e| bad(format!("class: {e}")))?;
            let cw: Codeword = cw.parse()?;
            let count: u64 = count.parse().map_err(|e| bad(format!("count: {e}")))?;
            if cw.len() != feature_dim {
                return Err(Error::Metadata {
                    what: "codeword length M",
                    declared: feature_dim.to_string(),
                    found: cw.len().to_string(),
                });
            }
            if class >= num_classes {
                return Err(bad(format!("class {class} >= n = {num_classes}")));
            }
            if count == 0 || book.classes[class].insert(cw, count).is_some() {
                return Err(bad("zero count or duplicate record".into()));
            }
            seen += 1;
        }
        if seen != records {
            return Err(Error::Metadata {
                what: "record count",
                declared: records.to_string(),
                found: seen.to_string(),
            });
        }
        let col = book.collisions();
        let expected = format!("{} {}", col.colliding_codewords, col.colliding_observations);
        if col_text != expected {
            return Err(Error::Parse {
                line: col_line,
                reason: format!(
                    "collision statistics `{col_text}` disagree with records (`{expected}`)"
                ),
            });
        }
        Ok(book)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }

    /// Reject a codebook that was not built for `model`'s feature and class counts.
    pub fn check_model(&self, model: &Model) -> Result<()> {
        if self.spec.feature_dim != model.feature_dim() {
            return Err(Error::Metadata {
                what: "M",
                declared: self.spec.feature_dim.to_string(),
                found: model.feature_dim().to_string(),
            });
        }
        if self.spec.num_classes != model.num_classes() {
            return Err(Error::Metadata {
                what: "N",
                declared: self.spec.num_classes.to_string(),
                found: model.num_classes().to_string(),
            });
        }
        Ok(())
    }
}
