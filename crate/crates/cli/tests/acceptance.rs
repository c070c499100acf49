//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zadex::attribution::{deconvnet, guided_backprop, lrp_epsilon_with_gap, saliency};
use zadex::fuzzifier::{categorize, codeword_truth, normalize, Codeword, Fuzzified, Symbol};
use zadex::nnet::load_model;
use zadex::{
    BackwardRule, Codebook, CodebookSpec, DatasetSource, FuzzConfig, LabelSource, Layer, LrpConfig,
    Method, Model, Tensor, TruthVector,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

// ---- 1: fuzzifier laws ----

fn fuzzifier_laws() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = FuzzConfig::default();
    let (hi, lo) = (0.5 + 1.0 / 6.0, 0.5 - 1.0 / 6.0);
    let mut violations = BTreeMap::<&str, usize>::new();
    let mut flips = 0usize;
    for _ in 0..10_000 {
        let m = rng.random_range(2..=84);
        let scale = 10f64.powi(rng.random_range(-3..=3));
        let y: Vec<f64> = (0..m)
            .map(|_| rng.random_range(-1.0..1.0) * scale)
            .collect();
        let n = normalize(&y).map_err(|e| e.to_string())?;
        let t = n.truth.values();
        let mut bad = |law: &'static str, cond: bool| {
            if !cond {
                *violations.entry(law).or_default() += 1;
            }
        };
        let imin = (0..m).min_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap();
        let imax = (0..m).max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap();
        bad(
            "min->0, max->1",
            n.degenerate || (t[imin] == 0.0 && t[imax] == 1.0),
        );
        let mut order = true;
        for i in 0..m {
            for j in 0..m {
                order &= y[i] > y[j] || t[i] <= t[j];
            }
        }
        bad("order", order);
        let a = rng.random_range(0.1..10.0);
        let b = rng.random_range(-10.0..10.0);
        let moved: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let n2 = normalize(&moved).map_err(|e| e.to_string())?;
        bad(
            "affine invariance",
            t.iter()
                .zip(n2.truth.values())
                .all(|(u, v)| (u - v).abs() <= 1e-9),
        );

        let cw = categorize(&n.truth, &cfg);
        let boundaries = t.iter().zip(cw.symbols()).all(|(&v, &s)| {
            let want = if v > hi {
                Symbol::One
            } else if v < lo {
                Symbol::Zero
            } else {
                Symbol::X
            };
            s == want
        });
        bad("band boundaries", boundaries);
        if cw.is_all_x() {
            continue;
        }
        let own = codeword_truth(&n.truth, &cw)
            .map_err(|e| e.to_string())?
            .value;
        bad("self-consistency", own > hi);
        for i in (0..m).filter(|&i| cw.symbols()[i] != Symbol::X) {
            let mut f = cw.symbols().to_vec();
            f[i] = f[i].flipped();
            let v = codeword_truth(&n.truth, &Codeword::new(f))
                .map_err(|e| e.to_string())?
                .value;
            bad("flip contradiction", v < lo);
            flips += 1;
        }
    }
    // Exact band edges are indeterminate.
    let edges = TruthVector::new(vec![
        2.0 / 3.0,
        0.5 - 1.0 / 6.0,
        0.5,
        2.0 / 3.0 + 1e-12,
        1.0 / 3.0 - 1e-12,
    ])
    .unwrap();
    ensure(categorize(&edges, &cfg).to_string() == "XXX10", || {
        format!("edge codeword {}", categorize(&edges, &cfg))
    })?;
    ensure(violations.is_empty(), || {
        format!("violations {violations:?}")
    })?;
    Ok(format!("10000 vectors, {flips} single flips, 0 violations"))
}

// ---- 2: classification against exhaustive search ----

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let symbols = [Symbol::Zero, Symbol::X, Symbol::One];
    let mut ties = 0;
    for case in 0..1000 {
        let m = rng.random_range(2..=6);
        let n = rng.random_range(2..=6);
        let spec = CodebookSpec {
            method: Method::Deconvnet,
            delta: 1.0 / 6.0,
            feature_dim: m,
            num_classes: n,
            label_source: LabelSource::Blackbox,
            keep_all_x: false,
        };
        let mut book = Codebook::new(spec).map_err(|e| e.to_string())?;
        let mut stored: Vec<(usize, Vec<Symbol>)> = Vec::new();
        for _ in 0..rng.random_range(1..=40) {
            let cw: Vec<Symbol> = (0..m).map(|_| symbols[rng.random_range(0..3)]).collect();
            if cw.iter().all(|&s| s == Symbol::X) {
                continue;
            }
            let class = rng.random_range(0..n);
            let f = Fuzzified {
                truth: TruthVector::new(vec![0.5; m]).unwrap(),
                codeword: Codeword::new(cw.clone()),
                degenerate: false,
            };
            book.observe(class, &f).map_err(|e| e.to_string())?;
            if !stored.contains(&(class, cw.clone())) {
                stored.push((class, cw));
            }
        }
        if stored.is_empty() {
            continue;
        }
        let y: Vec<f64> = (0..m)
            .map(|_| {
                if rng.random_bool(0.5) {
                    rng.random_range(0..=6) as f64 / 6.0
                } else {
                    rng.random_range(0.0..=1.0)
                }
            })
            .collect();
        // Truth by the min over non-X coordinates, then the declared tie policy.
        let truth = |cw: &[Symbol]| {
            cw.iter()
                .zip(&y)
                .filter_map(|(s, &v)| match s {
                    Symbol::One => Some(v),
                    Symbol::Zero => Some(1.0 - v),
                    Symbol::X => None,
                })
                .fold(1.0, f64::min)
        };
        let rank = |s: &Symbol| match s {
            Symbol::Zero => 0,
            Symbol::X => 1,
            Symbol::One => 2,
        };
        let top = stored
            .iter()
            .map(|(_, cw)| truth(cw))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut best: Vec<&(usize, Vec<Symbol>)> =
            stored.iter().filter(|(_, cw)| truth(cw) == top).collect();
        let tied_codewords = best.len();
        let mut tied_classes: Vec<usize> = best.iter().map(|(c, _)| *c).collect();
        tied_classes.sort_unstable();
        tied_classes.dedup();
        best.sort_by(|a, b| {
            let spec = |cw: &[Symbol]| cw.iter().filter(|&&s| s != Symbol::X).count();
            spec(&b.1)
                .cmp(&spec(&a.1))
                .then(a.0.cmp(&b.0))
                .then_with(|| a.1.iter().map(rank).cmp(b.1.iter().map(rank)))
        });
        let (class, cw) = best[0];
        let want_cw: String = cw.iter().map(|s| s.as_char()).collect();
        let e = book
            .classify(&TruthVector::new(y.clone()).unwrap())
            .map_err(|e| e.to_string())?;
        ensure(
            e.class == *class
                && e.codeword == want_cw
                && e.truth == top
                && e.ties.codewords == tied_codewords
                && e.ties.classes == tied_classes.len(),
            || {
                format!(
                    "case {case}: got class {} {} truth {} ties {:?}, expected class {class} {want_cw} truth {top} ties ({tied_codewords}, {})",
                    e.class,
                    e.codeword,
                    e.truth,
                    e.ties,
                    tied_classes.len()
                )
            },
        )?;
        ties += usize::from(tied_classes.len() > 1);
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "1000 instances identical, {ties} with class ties, {elapsed:.2?}"
    ))
}

// ---- shared random heads for 3-5 ----

fn dense(
    rng: &mut ChaCha8Rng,
    inputs: usize,
    outputs: usize,
    range: (f64, f64),
    bias: bool,
) -> Layer {
    let mut draw = |n: usize| {
        (0..n)
            .map(|_| rng.random_range(range.0..range.1))
            .collect::<Vec<_>>()
    };
    Layer::Dense {
        weights: Tensor::new(vec![outputs, inputs], draw(inputs * outputs)).unwrap(),
        bias: bias.then(|| Tensor::new(vec![outputs], draw(outputs)).unwrap()),
    }
}

fn random_head(rng: &mut ChaCha8Rng, range: (f64, f64), bias: bool) -> Model {
    let m = rng.random_range(2..24);
    let mut layers = vec![Layer::Flatten];
    let mut width = m;
    for _ in 0..rng.random_range(0..4) {
        let h = rng.random_range(2..16);
        layers.push(dense(rng, width, h, range, bias));
        layers.push(Layer::Relu);
        width = h;
    }
    let n = rng.random_range(2..11);
    layers.push(dense(rng, width, n, range, bias));
    Model::new(vec![m], layers, 0).unwrap()
}

fn vector(rng: &mut ChaCha8Rng, m: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..m).map(|_| rng.random_range(lo..hi)).collect()
}

// ---- 3: gradient check ----

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    let (mut heads, mut coords, mut skipped, mut worst) = (0, 0, 0, 0.0f64);
    while heads < 200 {
        let model = random_head(&mut rng, (-1.0, 1.0), true);
        let m = model.feature_dim();
        let x = vector(&mut rng, m, -1.0, 1.0);
        let trace = model
            .forward(&Tensor::vector(x.clone()).unwrap())
            .map_err(|e| e.to_string())?;
        let near_kink = (1..model.layers().len())
            .filter(|&i| matches!(model.layers()[i], Layer::Relu))
            .any(|i| trace.layer_input(i).values().iter().any(|v| v.abs() < 1e-3));
        if near_kink {
            skipped += 1;
            continue;
        }
        let target = trace.predicted();
        let g = model
            .backward_head(&trace, target, BackwardRule::Standard)
            .map_err(|e| e.to_string())?;
        let logit =
            |x: Vec<f64>| model.forward(&Tensor::vector(x).unwrap()).unwrap().logits()[target];
        for j in 0..m {
            let (mut up, mut down) = (x.clone(), x.clone());
            up[j] += h;
            down[j] -= h;
            let fd = (logit(up) - logit(down)) / (2.0 * h);
            let rel = (g[j] - fd).abs() / g[j].abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            coords += 1;
        }
        heads += 1;
    }
    let elapsed = start.elapsed();
    ensure(worst < 1e-4, || format!("max relative error {worst:.3e}"))?;
    ensure(elapsed < Duration::from_secs(30), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "{heads} heads, {coords} coordinates, max rel err {worst:.2e} ({skipped} near-kink draws skipped), {elapsed:.2?}"
    ))
}

// ---- 4: LRP conservation ----

fn lrp_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = LrpConfig::new(1e-9).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for trial in 0..500 {
        let model = random_head(&mut rng, (-1.0, 1.0), false);
        let x = vector(&mut rng, model.feature_dim(), -1.0, 1.0);
        let trace = model
            .forward(&Tensor::vector(x).unwrap())
            .map_err(|e| e.to_string())?;
        let (r, _) = lrp_epsilon_with_gap(&model, &trace, &cfg).map_err(|e| e.to_string())?;
        let top = trace.logits()[trace.predicted()];
        let err = (r.values.iter().sum::<f64>() - top).abs() / top.abs().max(1.0);
        worst = worst.max(err);
        ensure(err <= 1e-6, || {
            format!("trial {trial}: scaled gap {err:.3e}")
        })?;
    }
    Ok(format!("500 bias-free heads, max scaled gap {worst:.2e}"))
}

// ---- 5: masking rules coincide on positive networks ----

fn rule_degeneracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..100 {
        let model = random_head(&mut rng, (0.01, 1.0), true);
        let x = vector(&mut rng, model.feature_dim(), 0.0, 1.0);
        let trace = model
            .forward(&Tensor::vector(x).unwrap())
            .map_err(|e| e.to_string())?;
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        let s = bits(saliency(&model, &trace).map_err(|e| e.to_string())?.values);
        let d = bits(deconvnet(&model, &trace).map_err(|e| e.to_string())?.values);
        let g = bits(
            guided_backprop(&model, &trace)
                .map_err(|e| e.to_string())?
                .values,
        );
        ensure(s == d && s == g, || {
            format!("trial {trial}: outputs differ")
        })?;
    }
    Ok("100 positive networks, saliency = deconvnet = guided bit for bit".into())
}

// ---- 6 and 7: CLI pipeline ----

struct PipelineRun {
    dir: PathBuf,
    elapsed: Duration,
}

fn zadex(args: &[&str], out: &Path) -> Result<String, String> {
    let output = Command::new(env!("CARGO_BIN_EXE_zadex"))
        .args(args)
        .arg("--data-dir")
        .arg(data_dir())
        .arg("--out-dir")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&output.stdout).into_owned();
    ensure(output.status.success(), || {
        format!(
            "zadex {} exited with {}: {}",
            args.join(" "),
            output.status,
            String::from_utf8_lossy(&output.stderr)
        )
    })?;
    Ok(stdout)
}

fn pipeline(dir: PathBuf) -> Result<PipelineRun, String> {
    let start = Instant::now();
    zadex(&["train"], &dir)?;
    zadex(&["sweep"], &dir)?;
    Ok(PipelineRun {
        dir,
        elapsed: start.elapsed(),
    })
}

struct Row {
    p: f64,
    bb_accuracy: f64,
}

fn read_fidelity(path: &Path) -> Result<BTreeMap<String, Row>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or("empty fidelity file")?
        .split(',')
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or(format!("no column {name}"))
    };
    let (cm, cp, cb) = (col("method")?, col("p")?, col("bb_accuracy")?);
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |i: usize| f[i].parse::<f64>().map_err(|e| format!("{l}: {e}"));
            Ok((
                f[cm].to_string(),
                Row {
                    p: num(cp)?,
                    bb_accuracy: num(cb)?,
                },
            ))
        })
        .collect()
}

// MNIST matching rates of the reference run, used for the ranking comparison.
const REFERENCE: [(&str, f64); 5] = [
    ("raw", 0.9920),
    ("saliency", 0.9947),
    ("deconvnet", 1.0),
    ("guided", 0.9979),
    ("lrp", 0.9835),
];

fn table_replication(run: &PipelineRun, warnings: &mut Vec<String>) -> Outcome {
    let rows = read_fidelity(&run.dir.join("fidelity.csv"))?;
    let p = |m: &str| {
        rows.get(m)
            .map(|r| r.p)
            .ok_or(format!("method {m} missing"))
    };
    let deconv = p("deconvnet")?;
    let acc = rows["deconvnet"].bb_accuracy;
    ensure(acc >= 0.97, || {
        format!("black-box test accuracy {acc:.4} below 0.97")
    })?;
    for (m, _) in REFERENCE {
        let v = p(m)?;
        ensure(deconv >= v, || {
            format!("deconvnet {deconv:.4} below {m} {v:.4}")
        })?;
    }
    ensure(run.elapsed < Duration::from_secs(15 * 60), || {
        format!("pipeline took {:?}", run.elapsed)
    })?;
    if deconv < 0.99 {
        warnings.push(format!("deconvnet p = {deconv:.4} < 0.99"));
    }
    for (a, ra) in REFERENCE {
        for (b, rb) in REFERENCE {
            if ra > rb && p(a)? < p(b)? {
                warnings.push(format!(
                    "ranking: {a} ({:.4}) below {b} ({:.4}); reference has {a} above",
                    p(a)?,
                    p(b)?
                ));
            }
        }
    }
    let summary: Vec<String> = REFERENCE
        .iter()
        .map(|(m, _)| format!("{m} {:.2}%", 100.0 * rows[*m].p))
        .collect();
    Ok(format!(
        "bb acc {:.2}%, {}; {:.0?} wall",
        100.0 * acc,
        summary.join(", "),
        run.elapsed
    ))
}

fn reproducibility(a: &PipelineRun, b: &PipelineRun) -> Outcome {
    let mut names = vec!["model.bin".to_string(), "fidelity.csv".to_string()];
    names.extend(Method::ALL.iter().map(|m| format!("codebook-{m}.txt")));
    for name in &names {
        let x = fs::read(a.dir.join(name)).map_err(|e| format!("{name}: {e}"))?;
        let y = fs::read(b.dir.join(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure(x == y, || format!("{name} differs between runs"))?;
    }
    Ok(format!(
        "{} artifacts byte-identical across two runs",
        names.len()
    ))
}

// ---- 8: shard merge ----

fn merge_law(model_path: &Path) -> Outcome {
    let model = load_model(model_path).map_err(|e| e.to_string())?;
    let train = zadex::load_idx(&DatasetSource::in_dir(data_dir(), "train", Some(10_000)))
        .map_err(|e| e.to_string())?;
    let lrp = LrpConfig::default();
    let mut detail = Vec::new();
    for method in Method::ALL {
        let spec = CodebookSpec::for_model(&model, method, &FuzzConfig::default());
        let whole = Codebook::build(&model, &train, spec, &lrp).map_err(|e| e.to_string())?;
        let mut merged = Codebook::new(spec).map_err(|e| e.to_string())?;
        for shard in train.chunks(train.len().div_ceil(4)) {
            let part = Codebook::build(&model, shard, spec, &lrp).map_err(|e| e.to_string())?;
            merged.merge(part).map_err(|e| e.to_string())?;
        }
        ensure(merged == whole, || {
            format!("{method}: merged codebook differs")
        })?;
        detail.push(format!("{method} {}", whole.len()));
    }
    Ok(format!(
        "4 shards of {} samples; codewords: {}",
        train.len(),
        detail.join(", ")
    ))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("PASS [{n}] {name}: {detail}"),
        Err(why) => {
            failed += 1;
            println!("FAIL [{n}] {name}: {why}");
        }
    };
    report(1, "fuzzifier laws", fuzzifier_laws());
    report(2, "classify vs exhaustive oracle", oracle_equivalence());
    report(3, "gradient vs finite differences", gradient_check());
    report(4, "LRP conservation", lrp_conservation());
    report(5, "rule degeneracy", rule_degeneracy());

    let tmp = tempfile::tempdir().expect("temp dir");
    let first = pipeline(tmp.path().join("a"));
    let second = first.as_ref().ok().map(|_| pipeline(tmp.path().join("b")));
    let mut warnings = Vec::new();
    report(
        6,
        "desk-scale MNIST sweep",
        first
            .as_ref()
            .map_err(Clone::clone)
            .and_then(|r| table_replication(r, &mut warnings)),
    );
    for w in &warnings {
        println!("WARN [6] {w}");
    }
    let repro = match (&first, second) {
        (Ok(a), Some(Ok(b))) => reproducibility(a, &b),
        (_, Some(Err(e))) => Err(e),
        (Err(e), _) => Err(e.clone()),
        (Ok(_), None) => unreachable!(),
    };
    report(7, "reproducibility", repro);
    let merge = match &first {
        Ok(a) => merge_law(&a.dir.join("model.bin")),
        Err(e) => Err(format!("no trained model: {e}")),
    };
    report(8, "codebook merge law", merge);

    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
