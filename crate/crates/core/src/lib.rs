//! Post-hoc fuzzy-logic explanation of a small neural classifier.
//!
//! The black box is a feedforward network ([`nnet`]). For each sample, an attribution
//! method scores the M features of its penultimate layer toward the winning class
//! ([`attribution`]). The scores are min-max normalized into fuzzy truth values and
//! rounded into a ternary codeword over `{0, X, 1}` ([`fuzzifier`]). Codewords seen on the
//! training set form a per-class [`Codebook`], which classifies new samples by the
//! Zadeh (min) truth of its best-matching codeword. [`evaluation`] measures how often that
//! agrees with the black box.

pub mod attribution;
pub mod codebook;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod fuzzifier;
pub mod nnet;
pub mod tensor;

pub use attribution::{ImportanceVector, LrpConfig, Method};
pub use codebook::{Codebook, CodebookSpec, Explanation, LabelSource, TieReport};
pub use dataset::{load_idx, DatasetSource, Sample};
pub use error::{Error, Result};
pub use evaluation::{
    fidelity, method_sweep, sample_report, FidelityReport, SampleReport, SweepConfig,
};
pub use fuzzifier::{Codeword, FuzzConfig, Symbol, TruthVector};
pub use nnet::{ArchSpec, BackwardRule, ForwardTrace, Layer, Model, TrainConfig};
pub use tensor::Tensor;
