use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use zadex::{ArchSpec, FuzzConfig, LabelSource, LrpConfig, Method, TrainConfig};

use crate::error::CliError;

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub dataset: String,
    pub data_dir: PathBuf,
    pub train_count: usize,
    pub test_count: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub delta: f64,
    pub method: Method,
    pub methods: Vec<Method>,
    pub lrp_epsilon: f64,
    pub label_source: LabelSource,
    pub arch: String,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            dataset: "mnist".into(),
            data_dir: PathBuf::from("data/mnist"),
            train_count: 10_000,
            test_count: 2_000,
            out_dir: PathBuf::from("runs/default"),
            seed: 1,
            delta: FuzzConfig::DEFAULT_DELTA,
            method: Method::Deconvnet,
            methods: Method::ALL.to_vec(),
            lrp_epsilon: LrpConfig::DEFAULT_EPSILON,
            label_source: LabelSource::Blackbox,
            arch: ArchSpec::default().to_string(),
            epochs: train.epochs,
            learning_rate: train.learning_rate,
            momentum: train.momentum,
            lr_decay: train.lr_decay,
            batch_size: train.batch_size,
        }
    }
}

impl RunConfig {
    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let value = value.trim();
        let bad = |what: &str| CliError::Config(format!("{key}: invalid {what} `{value}`"));
        fn num<T: std::str::FromStr>(
            v: &str,
            err: impl Fn(&str) -> CliError,
            what: &str,
        ) -> Result<T, CliError> {
            v.parse().map_err(|_| err(what))
        }
        match key.trim() {
            "dataset" => self.dataset = value.to_string(),
            "data_dir" => self.data_dir = PathBuf::from(value),
            "train_count" => self.train_count = num(value, bad, "count")?,
            "test_count" => self.test_count = num(value, bad, "count")?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => self.seed = num(value, bad, "seed")?,
            "delta" => self.delta = num(value, bad, "number")?,
            "method" => {
                self.method = value
                    .parse()
                    .map_err(|e: zadex::Error| CliError::Config(e.to_string()))?
            }
            "methods" => {
                self.methods = value
                    .split(',')
                    .map(|m| m.parse::<Method>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| CliError::Config(e.to_string()))?
            }
            "lrp_epsilon" => self.lrp_epsilon = num(value, bad, "number")?,
            "label_source" => {
                self.label_source = value
                    .parse()
                    .map_err(|e: zadex::Error| CliError::Config(e.to_string()))?
            }
            "arch" => self.arch = value.to_string(),
            "epochs" => self.epochs = num(value, bad, "count")?,
            "learning_rate" => self.learning_rate = num(value, bad, "number")?,
            "momentum" => self.momentum = num(value, bad, "number")?,
            "lr_decay" => self.lr_decay = num(value, bad, "number")?,
            "batch_size" => self.batch_size = num(value, bad, "count")?,
            other => return Err(CliError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Flat `key = value` lines; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("config line {}: expected `key = value`", no + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.fuzz()?;
        self.lrp()?;
        self.arch_spec()?;
        if self.methods.is_empty() {
            return Err(CliError::Config("methods list is empty".into()));
        }
        if self.train_count == 0 || self.test_count == 0 {
            return Err(CliError::Config(
                "train_count and test_count must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn fuzz(&self) -> Result<FuzzConfig, CliError> {
        FuzzConfig::new(self.delta).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn lrp(&self) -> Result<LrpConfig, CliError> {
        LrpConfig::new(self.lrp_epsilon).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn arch_spec(&self) -> Result<ArchSpec, CliError> {
        self.arch
            .parse()
            .map_err(|e: zadex::Error| CliError::Config(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            lr_decay: self.lr_decay,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    pub fn model_path(&self) -> PathBuf {
        self.out_dir.join("model.bin")
    }

    pub fn codebook_path(&self, method: Method) -> PathBuf {
        self.out_dir.join(format!("codebook-{method}.txt"))
    }
}
