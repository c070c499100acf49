//! Synthetic fixtures for the benchmarks in `benches/`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zadex::fuzzifier::{Codeword, Fuzzified, Symbol};
use zadex::{
    ArchSpec, Codebook, CodebookSpec, FuzzConfig, LabelSource, Method, Model, Tensor, TruthVector,
};

/// The default architecture with seeded random weights.
pub fn default_model(seed: u64) -> Model {
    ArchSpec::default()
        .init(&[1, 28, 28], seed)
        .expect("default architecture")
}

pub fn random_image(seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(
        vec![1, 28, 28],
        (0..784).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .unwrap()
}

pub fn random_truth(m: usize, seed: u64) -> TruthVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TruthVector::new((0..m).map(|_| rng.random_range(0.0..=1.0)).collect()).unwrap()
}

/// A codebook with `size` random codewords spread over `classes`. Roughly a third of
/// the symbols are `X`.
pub fn random_codebook(m: usize, classes: usize, size: usize, seed: u64) -> Codebook {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = CodebookSpec {
        method: Method::Raw,
        delta: FuzzConfig::DEFAULT_DELTA,
        feature_dim: m,
        num_classes: classes,
        label_source: LabelSource::Blackbox,
        keep_all_x: false,
    };
    let mut book = Codebook::new(spec).unwrap();
    let symbols = [Symbol::Zero, Symbol::X, Symbol::One];
    while book.len() < size {
        let cw = Codeword::new((0..m).map(|_| symbols[rng.random_range(0..3)]).collect());
        let f = Fuzzified {
            truth: TruthVector::new(vec![0.5; m]).unwrap(),
            codeword: cw,
            degenerate: false,
        };
        book.observe(rng.random_range(0..classes), &f).unwrap();
    }
    book
}
