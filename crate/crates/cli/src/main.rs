//! `zadex`: train a black box, build fuzzy codebooks from its attributions, and
//! measure how faithfully they reproduce its decisions.

mod config;
mod error;
mod manifest;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use zadex::attribution::{attribute_batch, read_records, write_records, AttributionRecord};
use zadex::evaluation::{format_table, write_feature_csv, write_fidelity_csv};
use zadex::nnet::{load_model, save_model};
use zadex::{
    fidelity, method_sweep, sample_report, Codebook, CodebookSpec, DatasetSource, LabelSource,
    Method, Model, Sample, SweepConfig,
};

use config::RunConfig;
use error::CliError;
use manifest::write_manifest;

#[derive(Parser, Debug)]
#[command(
    name = "zadex",
    version,
    about = "Fuzzy-codeword explanations for neural classifiers"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Flat `key = value` file; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory with `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]`.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Name recorded in reports.
    #[arg(long, global = true)]
    dataset: Option<String>,
    #[arg(long, global = true)]
    train_count: Option<usize>,
    #[arg(long, global = true)]
    test_count: Option<usize>,
    /// Directory for all artifacts.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Half-width of the indeterminate band.
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// raw, saliency, deconvnet, guided or lrp.
    #[arg(long, global = true)]
    method: Option<Method>,
    /// Comma-separated list for `sweep`.
    #[arg(long, global = true, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long, global = true)]
    lrp_epsilon: Option<f64>,
    /// blackbox or groundtruth.
    #[arg(long, global = true)]
    label_source: Option<LabelSource>,
    #[arg(long, global = true)]
    arch: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    momentum: Option<f64>,
    /// Per-epoch learning-rate multiplier.
    #[arg(long, global = true)]
    lr_decay: Option<f64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the black-box classifier and write `model.bin`.
    Train,
    /// Write feature-layer importances for one split.
    Attribute {
        #[arg(long, value_enum, default_value_t = Split::Train)]
        split: Split,
    },
    /// Build the codebook of `--method` from the training split.
    BuildCodebook {
        /// Read importances from a file written by `attribute` instead of the model.
        #[arg(long)]
        attributions: Option<PathBuf>,
    },
    /// Fidelity of one codebook on the test split.
    Evaluate,
    /// Per-sample explanation as JSON and CSV.
    Explain {
        /// Index into the split.
        #[arg(long)]
        sample: usize,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
    },
    /// Codebook and fidelity for every method in `--methods`.
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    macro_rules! over {
        ($($f:ident),*) => {$(if let Some(v) = &common.$f { cfg.$f = v.clone(); })*};
    }
    over!(
        data_dir,
        dataset,
        train_count,
        test_count,
        out_dir,
        seed,
        delta,
        method,
        methods,
        lrp_epsilon,
        label_source,
        arch,
        epochs,
        learning_rate,
        momentum,
        lr_decay,
        batch_size
    );
    cfg.validate()?;
    Ok(cfg)
}

struct Loaded {
    samples: Vec<Sample>,
    files: Vec<PathBuf>,
}

fn load_split(cfg: &RunConfig, split: Split) -> Result<Loaded, CliError> {
    let limit = match split {
        Split::Train => cfg.train_count,
        Split::Test => cfg.test_count,
    };
    let src = DatasetSource::in_dir(&cfg.data_dir, split.prefix(), Some(limit));
    for p in [&src.images, &src.labels] {
        if !p.exists() {
            return Err(CliError::Data(format!("{} not found", p.display())));
        }
    }
    let samples = zadex::load_idx(&src)
        .map_err(|e| CliError::data(format!("{} split", split.prefix()), e))?;
    if samples.len() < limit {
        eprintln!(
            "note: {} split has {} samples, fewer than the {} requested",
            split.prefix(),
            samples.len(),
            limit
        );
    }
    Ok(Loaded {
        samples,
        files: vec![src.images, src.labels],
    })
}

fn load_trained(cfg: &RunConfig) -> Result<(Model, PathBuf), CliError> {
    let path = cfg.model_path();
    CliError::require(&path, "train")?;
    let model = load_model(&path).map_err(|e| CliError::data(path.display(), e))?;
    Ok((model, path))
}

fn load_codebook(cfg: &RunConfig, model: &Model) -> Result<(Codebook, PathBuf), CliError> {
    let path = cfg.codebook_path(cfg.method);
    CliError::require(&path, "build-codebook")?;
    let book = Codebook::load(&path).map_err(|e| CliError::data(path.display(), e))?;
    book.check_model(model)
        .map_err(|e| CliError::data(path.display(), e))?;
    if book.spec().delta != cfg.delta {
        eprintln!(
            "note: codebook was built with delta {:?}; using it",
            book.spec().delta
        );
    }
    Ok((book, path))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("cannot create {}", path.display())
    })?))
}

fn command_line() -> String {
    std::env::args().skip(1).collect::<Vec<_>>().join(" ")
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli.common)?;
    fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("cannot create {}", cfg.out_dir.display()))?;
    let lrp = cfg.lrp()?;
    match cli.command {
        Command::Train => {
            let train = load_split(&cfg, Split::Train)?;
            let test = load_split(&cfg, Split::Test)?;
            let input_shape = train.samples[0].image.shape().to_vec();
            let model = cfg.arch_spec()?.init(&input_shape, cfg.seed)?;
            let (model, report) = zadex::nnet::train(
                model,
                &train.samples,
                Some(&test.samples),
                &cfg.train_config(),
            )?;
            for (e, loss) in report.epoch_losses.iter().enumerate() {
                println!("epoch {:>3}  loss {loss:.5}", e + 1);
            }
            println!("train accuracy {:.4}", report.train_accuracy);
            if let Some(acc) = report.test_accuracy {
                println!("test accuracy  {acc:.4}");
            }
            let path = cfg.model_path();
            save_model(&model, &path).map_err(anyhow::Error::from)?;
            let report_path = cfg.out_dir.join("train-report.json");
            fs::write(
                &report_path,
                serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)? + "\n",
            )?;
            let inputs = [train.files, test.files].concat();
            write_manifest(&cfg, "train", command_line(), &inputs, &[path, report_path])?;
        }
        Command::Attribute { split } => {
            let (model, model_path) = load_trained(&cfg)?;
            let data = load_split(&cfg, split)?;
            let ivs = attribute_batch(&model, &data.samples, &[cfg.method], &lrp)?;
            let records: Vec<AttributionRecord> = ivs
                .into_iter()
                .enumerate()
                .map(|(i, mut v)| AttributionRecord {
                    sample_id: i,
                    importance: v.remove(0),
                })
                .collect();
            let path = cfg.out_dir.join(format!(
                "attributions-{}-{}.tsv",
                cfg.method,
                split.prefix()
            ));
            write_records(create(&path)?, &records).map_err(anyhow::Error::from)?;
            println!("{} importances -> {}", records.len(), path.display());
            let inputs = [vec![model_path], data.files].concat();
            write_manifest(
                &cfg,
                &format!("attribute-{}", split.prefix()),
                command_line(),
                &inputs,
                &[path],
            )?;
        }
        Command::BuildCodebook { attributions } => {
            let (model, model_path) = load_trained(&cfg)?;
            let spec = CodebookSpec::for_model(&model, cfg.method, &cfg.fuzz()?)
                .with_label_source(cfg.label_source);
            let (book, mut inputs) = match attributions {
                None => {
                    let train = load_split(&cfg, Split::Train)?;
                    let book = Codebook::build(&model, &train.samples, spec, &lrp)?;
                    (book, train.files)
                }
                Some(path) => {
                    let file = File::open(&path)
                        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                    let records = read_records(BufReader::new(file))
                        .map_err(|e| CliError::data(path.display(), e))?;
                    let mut inputs = vec![path.clone()];
                    let labels: Option<Vec<usize>> = match cfg.label_source {
                        LabelSource::Blackbox => None,
                        LabelSource::Groundtruth => {
                            let train = load_split(&cfg, Split::Train)?;
                            inputs.extend(train.files);
                            Some(train.samples.iter().map(|s| s.label).collect())
                        }
                    };
                    let mut items = Vec::with_capacity(records.len());
                    for r in &records {
                        let label = match &labels {
                            None => r.importance.target_class,
                            Some(l) => *l.get(r.sample_id).ok_or_else(|| {
                                CliError::Data(format!(
                                    "sample id {} has no training label",
                                    r.sample_id
                                ))
                            })?,
                        };
                        items.push((label, &r.importance));
                    }
                    let book = Codebook::from_importances(spec, items)
                        .map_err(|e| CliError::data(path.display(), e))?;
                    (book, inputs)
                }
            };
            let path = cfg.codebook_path(cfg.method);
            book.save(&path).map_err(anyhow::Error::from)?;
            let c = book.counters();
            let col = book.collisions();
            println!(
                "{} codewords from {} samples (skipped {} all-X, {} degenerate); {} colliding codewords",
                book.len(),
                c.samples,
                c.skipped_all_x,
                c.skipped_degenerate,
                col.colliding_codewords
            );
            println!("class sizes {:?}", book.class_sizes());
            inputs.insert(0, model_path);
            write_manifest(
                &cfg,
                &format!("codebook-{}", cfg.method),
                command_line(),
                &inputs,
                &[path],
            )?;
        }
        Command::Evaluate => {
            let (model, model_path) = load_trained(&cfg)?;
            let (book, book_path) = load_codebook(&cfg, &model)?;
            let test = load_split(&cfg, Split::Test)?;
            let (report, _) = fidelity(&model, &book, &test.samples, &cfg.dataset, &lrp)?;
            print!("{}", format_table(std::slice::from_ref(&report)));
            let path = cfg.out_dir.join(format!("fidelity-{}.csv", cfg.method));
            write_fidelity_csv(create(&path)?, [&report]).map_err(anyhow::Error::from)?;
            let inputs = [vec![model_path, book_path], test.files].concat();
            write_manifest(
                &cfg,
                &format!("evaluate-{}", cfg.method),
                command_line(),
                &inputs,
                &[path],
            )?;
        }
        Command::Explain { sample, split } => {
            let (model, model_path) = load_trained(&cfg)?;
            let (book, book_path) = load_codebook(&cfg, &model)?;
            let data = load_split(&cfg, split)?;
            let s = data.samples.get(sample).ok_or_else(|| {
                CliError::Data(format!(
                    "sample {sample} out of range; {} split has {} samples",
                    split.prefix(),
                    data.samples.len()
                ))
            })?;
            let report = sample_report(&model, &book, s, sample, &lrp)?;
            let stem = format!("sample-{}-{sample}-{}", split.prefix(), cfg.method);
            let json = cfg.out_dir.join(format!("{stem}.json"));
            let csv = cfg.out_dir.join(format!("{stem}.csv"));
            fs::write(
                &json,
                serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)? + "\n",
            )?;
            write_feature_csv(create(&csv)?, &report).map_err(anyhow::Error::from)?;
            print_explanation(&report);
            let inputs = [vec![model_path, book_path], data.files].concat();
            write_manifest(
                &cfg,
                &format!("explain-{stem}"),
                command_line(),
                &inputs,
                &[json, csv],
            )?;
        }
        Command::Sweep => {
            let (model, model_path) = load_trained(&cfg)?;
            let train = load_split(&cfg, Split::Train)?;
            let test = load_split(&cfg, Split::Test)?;
            let sweep = SweepConfig {
                fuzz: cfg.fuzz()?,
                lrp,
                label_source: cfg.label_source,
            };
            let rows = method_sweep(
                &model,
                &train.samples,
                &test.samples,
                &cfg.methods,
                &cfg.dataset,
                &sweep,
            )?;
            let mut outputs = Vec::new();
            for row in &rows {
                let path = cfg.codebook_path(row.report.method);
                row.codebook.save(&path).map_err(anyhow::Error::from)?;
                outputs.push(path);
            }
            let reports: Vec<_> = rows.into_iter().map(|r| r.report).collect();
            print!("{}", format_table(&reports));
            let path = cfg.out_dir.join("fidelity.csv");
            write_fidelity_csv(create(&path)?, &reports).map_err(anyhow::Error::from)?;
            outputs.push(path);
            let inputs = [vec![model_path], train.files, test.files].concat();
            write_manifest(&cfg, "sweep", command_line(), &inputs, &outputs)?;
        }
    }
    Ok(())
}

fn print_explanation(r: &zadex::SampleReport) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "sample {}  label {}  black box {} ({:.3})",
        r.sample_id,
        r.label.map_or("-".into(), |l| l.to_string()),
        r.blackbox_class,
        r.blackbox_confidence
    );
    match (r.explainer_class, r.explainer_truth) {
        (Some(c), Some(t)) => {
            let _ = writeln!(
                out,
                "explainer {c} (truth {t:.4}){}",
                if r.matched { "" } else { "  MISMATCH" }
            );
        }
        _ => {
            let _ = writeln!(out, "explainer abstains (degenerate importances)");
        }
    }
    match &r.explanation {
        Some(e) => {
            let _ = writeln!(out, "codeword {}  truth {:.4}", e.codeword, e.truth);
            for f in e.relevant() {
                let _ = writeln!(
                    out,
                    "  feature {:>3}  {}  y~ {:.4}  truth {:.4}",
                    f.index,
                    f.symbol,
                    f.truth_value,
                    f.truth.unwrap_or(1.0)
                );
            }
        }
        None => {
            let _ = writeln!(out, "no explanation for class {}", r.blackbox_class);
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
