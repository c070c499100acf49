mod common;

use common::{random_images, uniform, SMALL_CNN};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zadex::attribution::attribute_batch;
use zadex::fuzzifier::{codeword_truth, fuzzify, Codeword, Fuzzified, Symbol};
use zadex::{
    ArchSpec, Codebook, CodebookSpec, FuzzConfig, LabelSource, LrpConfig, Method, TruthVector,
};

fn spec(m: usize, n: usize) -> CodebookSpec {
    CodebookSpec {
        method: Method::Deconvnet,
        delta: 1.0 / 6.0,
        feature_dim: m,
        num_classes: n,
        label_source: LabelSource::Blackbox,
        keep_all_x: false,
    }
}

fn random_codeword(rng: &mut ChaCha8Rng, m: usize) -> Codeword {
    loop {
        let cw = Codeword::new(
            (0..m)
                .map(|_| [Symbol::Zero, Symbol::X, Symbol::One][rng.random_range(0..3)])
                .collect(),
        );
        if !cw.is_all_x() {
            return cw;
        }
    }
}

fn store(book: &mut Codebook, class: usize, cw: Codeword) {
    let f = Fuzzified {
        truth: TruthVector::new(vec![0.5; cw.len()]).unwrap(),
        codeword: cw,
        degenerate: false,
    };
    book.observe(class, &f).unwrap();
}

// Exhaustive evaluation of every stored codeword, then the tie policy as a sort key.
fn brute_force(book: &Codebook, t: &TruthVector) -> (usize, String, f64, usize, usize) {
    let mut all = Vec::new();
    for class in 0..book.spec().num_classes {
        for cw in book.class(class).unwrap().keys() {
            all.push((class, cw.clone(), codeword_truth(t, cw).unwrap().value));
        }
    }
    let top = all.iter().map(|a| a.2).fold(f64::NEG_INFINITY, f64::max);
    let mut tied: Vec<_> = all.into_iter().filter(|a| a.2 == top).collect();
    let mut classes: Vec<usize> = tied.iter().map(|a| a.0).collect();
    classes.dedup();
    let count = tied.len();
    tied.sort_by(|a, b| {
        b.1.specificity()
            .cmp(&a.1.specificity())
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    let (class, cw, truth) = tied.swap_remove(0);
    (class, cw.to_string(), truth, count, classes.len())
}

#[test]
fn classify_agrees_with_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut class_ties = 0;
    for _ in 0..1000 {
        let m = rng.random_range(2..=6);
        let n = rng.random_range(2..=5);
        let mut book = Codebook::new(spec(m, n)).unwrap();
        for _ in 0..rng.random_range(1..=40) {
            let cw = random_codeword(&mut rng, m);
            store(&mut book, rng.random_range(0..n), cw);
        }
        // Coarse truth values make ties common.
        let t: Vec<f64> = (0..m)
            .map(|_| rng.random_range(0..=4) as f64 / 4.0)
            .collect();
        let t = TruthVector::new(t).unwrap();
        let e = book.classify(&t).unwrap();
        let (class, cw, truth, count, classes) = brute_force(&book, &t);
        assert_eq!(
            (e.class, e.codeword.as_str(), e.truth),
            (class, cw.as_str(), truth)
        );
        assert_eq!((e.ties.codewords, e.ties.classes), (count, classes));
        class_ties += usize::from(e.ties.is_class_tie());
    }
    assert!(class_ties > 50, "only {class_ties} class ties exercised");
}

struct Fixture {
    model: zadex::Model,
    train: Vec<zadex::Sample>,
    spec: CodebookSpec,
    lrp: LrpConfig,
}

fn fixture(seed: u64, method: Method) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = SMALL_CNN
        .parse::<ArchSpec>()
        .unwrap()
        .init(&[1, 8, 8], seed)
        .unwrap();
    let train = random_images(&mut rng, 120, 4);
    let spec = CodebookSpec::for_model(&model, method, &FuzzConfig::default());
    Fixture {
        model,
        train,
        spec,
        lrp: LrpConfig::default(),
    }
}

#[test]
fn shard_merge_equals_monolithic_build() {
    for method in Method::ALL {
        let f = fixture(22, method);
        let whole = Codebook::build(&f.model, &f.train, f.spec, &f.lrp).unwrap();
        let mut merged = Codebook::new(f.spec).unwrap();
        for shard in f.train.chunks(f.train.len().div_ceil(4)) {
            merged
                .merge(Codebook::build(&f.model, shard, f.spec, &f.lrp).unwrap())
                .unwrap();
        }
        assert_eq!(merged, whole, "{method}");
        assert_eq!(merged.counters().samples, f.train.len() as u64);
    }
}

#[test]
fn build_ignores_sample_order() {
    let mut f = fixture(23, Method::Lrp);
    let a = Codebook::build(&f.model, &f.train, f.spec, &f.lrp).unwrap();
    f.train.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let b = Codebook::build(&f.model, &f.train, f.spec, &f.lrp).unwrap();
    assert_eq!(a, b);
}

#[test]
fn build_equals_precomputed_importances() {
    for label_source in [LabelSource::Blackbox, LabelSource::Groundtruth] {
        let f = fixture(24, Method::Guided);
        let spec = f.spec.with_label_source(label_source);
        let built = Codebook::build(&f.model, &f.train, spec, &f.lrp).unwrap();
        let ivs = attribute_batch(&f.model, &f.train, &[spec.method], &f.lrp).unwrap();
        let items = f.train.iter().zip(&ivs).map(|(s, iv)| {
            let label = match label_source {
                LabelSource::Blackbox => iv[0].target_class,
                LabelSource::Groundtruth => s.label,
            };
            (label, &iv[0])
        });
        assert_eq!(Codebook::from_importances(spec, items).unwrap(), built);
    }
}

#[test]
fn every_stored_codeword_explains_its_own_sample() {
    let f = fixture(25, Method::Raw);
    let book = Codebook::build(&f.model, &f.train, f.spec, &f.lrp).unwrap();
    let fuzz = FuzzConfig::default();
    for iv in attribute_batch(&f.model, &f.train, &[Method::Raw], &f.lrp).unwrap() {
        let fz = fuzzify(&iv[0], &fuzz).unwrap();
        if fz.degenerate || fz.codeword.is_all_x() {
            continue;
        }
        let e = book.classify(&fz.truth).unwrap();
        assert!(
            e.truth > fuzz.upper(),
            "own codeword is in the book, so truth exceeds 1/2 + delta"
        );
    }
}

#[test]
fn classify_ignores_positive_rescaling_of_importances() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let fuzz = FuzzConfig::default();
    let mut book = Codebook::new(spec(6, 3)).unwrap();
    for _ in 0..30 {
        let cw = random_codeword(&mut rng, 6);
        store(&mut book, rng.random_range(0..3), cw);
    }
    for _ in 0..500 {
        let y = uniform(&mut rng, 6, -5.0, 5.0);
        let a = rng.random_range(0.1..10.0);
        let b = rng.random_range(-10.0..10.0);
        let iv = |values: Vec<f64>| zadex::ImportanceVector {
            method: Method::Deconvnet,
            target_class: 0,
            values,
        };
        let base = fuzzify(&iv(y.clone()), &fuzz).unwrap();
        let moved = fuzzify(&iv(y.iter().map(|v| a * v + b).collect()), &fuzz).unwrap();
        let near_edge = base
            .truth
            .values()
            .iter()
            .any(|v| (v - fuzz.upper()).abs() < 1e-9 || (v - fuzz.lower()).abs() < 1e-9);
        if near_edge {
            continue;
        }
        let (e1, e2) = (
            book.classify(&base.truth).unwrap(),
            book.classify(&moved.truth).unwrap(),
        );
        assert_eq!(base.codeword, moved.codeword);
        assert_eq!((e1.class, &e1.codeword), (e2.class, &e2.codeword));
        assert!((e1.truth - e2.truth).abs() < 1e-9);
    }
}
