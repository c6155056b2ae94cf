//! IDX image and label files (the MNIST distribution format).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an unsigned-byte IDX array (type code `0x08`).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Format("missing IDX magic".into()));
    }
    if bytes[2] != 0x08 {
        return Err(Error::Format(format!("unsupported IDX element type {:#04x}", bytes[2])));
    }
    let rank = bytes[3] as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::Format("truncated IDX header".into()));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    if bytes.len() - header != count {
        return Err(Error::Format(format!(
            "IDX body has {} bytes, dimensions {dims:?} need {count}",
            bytes.len() - header
        )));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn encode_idx(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

/// Labelled grayscale images with raw 0..=255 pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    features: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
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

impl Dataset {
    pub fn new(features: usize, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if features == 0 || pixels.len() != features * labels.len() {
            return Err(Error::Shape(format!(
                "{} pixels for {} samples of {features} features",
                pixels.len(),
                labels.len()
            )));
        }
        Ok(Dataset {
            features,
            pixels,
            labels,
        })
    }

    pub fn from_idx(images: &[u8], labels: &[u8]) -> Result<Self> {
        let images = parse_idx(images)?;
        let labels = parse_idx(labels)?;
        if images.dims.len() < 2 || labels.dims.len() != 1 || images.dims[0] != labels.dims[0] {
            return Err(Error::Format(format!(
                "image dims {:?} do not match label dims {:?}",
                images.dims, labels.dims
            )));
        }
        let features = images.dims[1..].iter().product();
        Dataset::new(features, images.data, labels.data)
    }

    pub fn from_files(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Self> {
        Dataset::from_idx(&fs::read(images)?, &fs::read(labels)?)
    }

    /// Loads `train-*` or `t10k-*` IDX files from an MNIST directory.
    pub fn load_mnist(dir: impl AsRef<Path>, split: Split) -> Result<Self> {
        let dir = dir.as_ref();
        let p = split.prefix();
        Dataset::from_files(
            dir.join(format!("{p}-images-idx3-ubyte")),
            dir.join(format!("{p}-labels-idx1-ubyte")),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn pixels(&self, i: usize) -> &[u8] {
        &self.pixels[i * self.features..(i + 1) * self.features]
    }

    pub fn input(&self, i: usize) -> Vec<i64> {
        self.pixels(i).iter().map(|&p| p as i64).collect()
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            features: self.features,
            pixels: self.pixels[..n * self.features].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}
