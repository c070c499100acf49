use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// What a stage read and wrote, with enough configuration to run it again.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub stage: &'a str,
    pub command: String,
    pub seed: u64,
    pub config: &'a RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn digest(path: &Path) -> std::io::Result<FileDigest> {
    let bytes = fs::read(path)?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

pub fn write_manifest(
    cfg: &RunConfig,
    stage: &str,
    command: String,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> anyhow::Result<PathBuf> {
    let m = Manifest {
        stage,
        command,
        seed: cfg.seed,
        config: cfg,
        inputs: inputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?,
        outputs: outputs
            .iter()
            .map(|p| digest(p))
            .collect::<Result<_, _>>()?,
    };
    let path = cfg.out_dir.join(format!("manifest-{stage}.json"));
    fs::write(&path, serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(path)
}
