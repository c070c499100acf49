//! Importance scores to fuzzy truth values and ternary relevance codewords.
//!
//! A truth vector is the per-sample min-max normalization of an importance vector. Each
//! coordinate is then rounded to a symbol: `1` (the feature must be present) above
//! `1/2 + Δ`, `0` (must be absent) below `1/2 - Δ`, and `X` (irrelevant) inside the band,
//! boundaries included. Truth of a codeword is the Zadeh conjunction (minimum) over its
//! non-`X` coordinates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attribution::ImportanceVector;
use crate::error::{Error, Result};

/// Values in `[0, 1]`, one per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TruthVector(Vec<f64>);

impl TruthVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(format!(
                "truth value {} at index {index} outside [0, 1]",
                values[index]
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for TruthVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TruthVector> for Vec<f64> {
    fn from(t: TruthVector) -> Self {
        t.0
    }
}

/// Ordered `0 < X < 1`; the codebook tie-break relies on this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    Zero,
    X,
    One,
}

impl Symbol {
    pub fn as_char(self) -> char {
        match self {
            Symbol::Zero => '0',
            Symbol::X => 'X',
            Symbol::One => '1',
        }
    }

    pub fn from_char(c: char) -> Result<Self> {
        match c {
            '0' => Ok(Symbol::Zero),
            'X' => Ok(Symbol::X),
            '1' => Ok(Symbol::One),
            other => Err(Error::Symbol(other)),
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Symbol::Zero => Symbol::One,
            Symbol::One => Symbol::Zero,
            Symbol::X => Symbol::X,
        }
    }
}

/// Ternary relevance pattern over the M features, written as a string over `0`, `X`, `1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Codeword(Vec<Symbol>);

impl Codeword {
    pub fn new(symbols: Vec<Symbol>) -> Self {
        Self(symbols)
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of non-`X` symbols.
    pub fn specificity(&self) -> usize {
        self.0.iter().filter(|&&s| s != Symbol::X).count()
    }

    pub fn is_all_x(&self) -> bool {
        self.0.iter().all(|&s| s == Symbol::X)
    }

    pub fn count(&self, symbol: Symbol) -> usize {
        self.0.iter().filter(|&&s| s == symbol).count()
    }
}

impl fmt::Display for Codeword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.0.iter().map(|s| s.as_char()).collect();
        f.write_str(&s)
    }
}

impl FromStr for Codeword {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(Symbol::from_char)
            .collect::<Result<Vec<_>>>()
            .map(Codeword)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuzzConfig {
    delta: f64,
}

impl FuzzConfig {
    pub const DEFAULT_DELTA: f64 = 1.0 / 6.0;

    /// `delta` is the half-width of the irrelevance band, in `[0, 0.5)`.
    pub fn new(delta: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&delta) {
            return Err(Error::Config(format!("delta {delta} outside [0, 0.5)")));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn upper(&self) -> f64 {
        0.5 + self.delta
    }

    pub fn lower(&self) -> f64 {
        0.5 - self.delta
    }
}

impl Default for FuzzConfig {
    fn default() -> Self {
        Self {
            delta: Self::DEFAULT_DELTA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub truth: TruthVector,
    /// All importances were equal; the truth vector is all one-half.
    pub degenerate: bool,
}

/// Min-max normalization onto `[0, 1]`: the minimum maps to 0 and the maximum to 1.
pub fn normalize(importance: &[f64]) -> Result<Normalized> {
    if importance.len() < 2 {
        return Err(Error::Config(format!(
            "normalization needs at least 2 importances, got {}",
            importance.len()
        )));
    }
    if let Some(index) = importance.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let min = importance.iter().copied().fold(f64::INFINITY, f64::min);
    let max = importance.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(Normalized {
            truth: TruthVector(vec![0.5; importance.len()]),
            degenerate: true,
        });
    }
    let range = max - min;
    let values = if range.is_finite() {
        importance.iter().map(|&y| (y - min) / range).collect()
    } else {
        // Halve first so the span itself cannot overflow.
        let (lo, span) = (min / 2.0, max / 2.0 - min / 2.0);
        importance
            .iter()
            .map(|&y| ((y / 2.0 - lo) / span).clamp(0.0, 1.0))
            .collect()
    };
    Ok(Normalized {
        truth: TruthVector(values),
        degenerate: false,
    })
}

pub fn categorize(truth: &TruthVector, cfg: &FuzzConfig) -> Codeword {
    let (lo, hi) = (cfg.lower(), cfg.upper());
    Codeword(
        truth
            .values()
            .iter()
            .map(|&v| {
                if v > hi {
                    Symbol::One
                } else if v < lo {
                    Symbol::Zero
                } else {
                    Symbol::X
                }
            })
            .collect(),
    )
}

/// Truth of "feature has relevance `symbol`": `ỹ` for `1`, `1 - ỹ` for `0`.
pub fn feature_truth(truth_value: f64, symbol: Symbol) -> Result<f64> {
    match symbol {
        Symbol::One => Ok(truth_value),
        Symbol::Zero => Ok(1.0 - truth_value),
        Symbol::X => Err(Error::Symbol('X')),
    }
}

#[inline]
pub(crate) fn symbol_truth(v: f64, s: Symbol) -> f64 {
    match s {
        Symbol::One => v,
        Symbol::Zero => 1.0 - v,
        Symbol::X => 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodewordTruth {
    pub value: f64,
    /// The codeword was all `X`; `value` is the empty minimum, 1.
    pub vacuous: bool,
}

pub fn codeword_truth(truth: &TruthVector, codeword: &Codeword) -> Result<CodewordTruth> {
    if truth.len() != codeword.len() {
        return Err(Error::LengthMismatch {
            expected: codeword.len(),
            found: truth.len(),
        });
    }
    let mut value = 1.0_f64;
    let mut vacuous = true;
    for (&v, &s) in truth.values().iter().zip(codeword.symbols()) {
        if s != Symbol::X {
            vacuous = false;
            value = value.min(symbol_truth(v, s));
        }
    }
    Ok(CodewordTruth { value, vacuous })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fuzzified {
    pub truth: TruthVector,
    pub codeword: Codeword,
    pub degenerate: bool,
}

pub fn fuzzify(importance: &ImportanceVector, cfg: &FuzzConfig) -> Result<Fuzzified> {
    let Normalized { truth, degenerate } = normalize(&importance.values)?;
    let codeword = categorize(&truth, cfg);
    Ok(Fuzzified {
        truth,
        codeword,
        degenerate,
    })
}
