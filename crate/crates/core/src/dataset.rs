//! IDX (MNIST container) ingestion.
//!
//! Files are big-endian: a magic number `0x0000TTDD` (type `TT` = `0x08` for unsigned bytes,
//! `DD` = dimension count), one `u32` per dimension, then the raw payload. Paths ending
//! in `.gz` are decompressed transparently.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[1, rows, cols]`, pixels scaled to `[0, 1]`.
    pub image: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

/// Where to read a labeled image set from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSource {
    pub images: PathBuf,
    pub labels: PathBuf,
    /// Keep only the first `limit` samples.
    pub limit: Option<usize>,
}

impl DatasetSource {
    /// Standard file names inside `dir`, e.g. `train-images-idx3-ubyte[.gz]`.
    pub fn in_dir(dir: impl AsRef<Path>, prefix: &str, limit: Option<usize>) -> Self {
        let dir = dir.as_ref();
        let pick = |stem: String| {
            let plain = dir.join(&stem);
            let gz = dir.join(format!("{stem}.gz"));
            if !plain.exists() && gz.exists() {
                gz
            } else {
                plain
            }
        };
        Self {
            images: pick(format!("{prefix}-images-idx3-ubyte")),
            labels: pick(format!("{prefix}-labels-idx1-ubyte")),
            limit,
        }
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    let f = BufReader::new(File::open(path)?);
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(f).read_to_end(&mut bytes)?;
    } else {
        let mut f = f;
        f.read_to_end(&mut bytes)?;
    }
    Ok(bytes)
}

fn header(bytes: &[u8], path: &str, magic: u32) -> Result<Vec<usize>> {
    let ndims = (magic & 0xff) as usize;
    let need = 4 + 4 * ndims;
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            path: path.into(),
            expected: need,
            found: bytes.len(),
        });
    }
    let found = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if found != magic {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: magic,
            found,
        });
    }
    if bytes.len() < need {
        return Err(Error::Truncated {
            path: path.into(),
            expected: need,
            found: bytes.len(),
        });
    }
    Ok(bytes[4..need]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect())
}

fn payload<'a>(bytes: &'a [u8], path: &str, offset: usize, len: usize) -> Result<&'a [u8]> {
    let found = bytes.len() - offset;
    if found < len {
        return Err(Error::Truncated {
            path: path.into(),
            expected: len,
            found,
        });
    }
    Ok(&bytes[offset..offset + len])
}

pub fn parse_images(bytes: &[u8], path: &str) -> Result<IdxImages> {
    let dims = header(bytes, path, IMAGES_MAGIC)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let pixels = payload(bytes, path, 16, count * rows * cols)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_labels(bytes: &[u8], path: &str) -> Result<Vec<u8>> {
    let dims = header(bytes, path, LABELS_MAGIC)?;
    Ok(payload(bytes, path, 8, dims[0])?.to_vec())
}

pub fn load_idx(source: &DatasetSource) -> Result<Vec<Sample>> {
    let ipath = source.images.display().to_string();
    let lpath = source.labels.display().to_string();
    let images = parse_images(&read_file(&source.images)?, &ipath)?;
    let labels = parse_labels(&read_file(&source.labels)?, &lpath)?;
    if images.count != labels.len() {
        return Err(Error::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let n = source.limit.map_or(images.count, |l| l.min(images.count));
    let per = images.rows * images.cols;
    Ok((0..n)
        .map(|i| Sample {
            image: Tensor::from_parts(
                vec![1, images.rows, images.cols],
                images.pixels[i * per..(i + 1) * per]
                    .iter()
                    .map(|&p| f64::from(p) / 255.0)
                    .collect(),
            ),
            label: usize::from(labels[i]),
        })
        .collect())
}
