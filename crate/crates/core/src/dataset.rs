//! Fashion-MNIST ingestion: IDX decoding, pixel normalization and a
//! stratified, seed-controlled train/validation split.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::Shape;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("bad IDX magic 0x{0:08x}")]
    BadMagic(u32),
    #[error("truncated IDX payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("IDX dimensions overflow the addressable size")]
    DimensionOverflow,
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at index {index} is not a valid class")]
    BadLabel { index: usize, label: u8 },
    #[error("split would leave an empty side (validation fraction {0})")]
    EmptySplit(f64),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Decoded IDX container: dimension sizes and unsigned-byte payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Decodes an IDX file (raw or gzip-compressed) holding unsigned bytes.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor, DatasetError> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut raw = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut raw)
            .map_err(|source| DatasetError::Io {
                path: "<gzip stream>".into(),
                source,
            })?;
        return parse_idx(&raw);
    }
    let header = |at: usize| -> Result<u32, DatasetError> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or(DatasetError::TruncatedPayload {
                expected: at + 4,
                found: bytes.len(),
            })
    };
    let magic = header(0)?;
    if magic != IMAGE_MAGIC && magic != LABEL_MAGIC {
        return Err(DatasetError::BadMagic(magic));
    }
    let ndim = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndim);
    let mut total: usize = 1;
    for d in 0..ndim {
        let n = header(4 + 4 * d)? as usize;
        total = total.checked_mul(n).ok_or(DatasetError::DimensionOverflow)?;
        dims.push(n);
    }
    let start = 4 + 4 * ndim;
    let expected = start
        .checked_add(total)
        .ok_or(DatasetError::DimensionOverflow)?;
    if bytes.len() < expected {
        return Err(DatasetError::TruncatedPayload {
            expected,
            found: bytes.len(),
        });
    }
    Ok(IdxTensor {
        magic,
        dims,
        data: bytes[start..expected].to_vec(),
    })
}

/// Serializes an unsigned-byte IDX tensor (uncompressed).
pub fn write_idx(magic: u32, dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + data.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

/// Raw 8-bit images with class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImageSet {
    pub height: usize,
    pub width: usize,
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawImageSet {
    pub fn from_idx(images: IdxTensor, labels: IdxTensor) -> Result<Self, DatasetError> {
        if images.magic != IMAGE_MAGIC {
            return Err(DatasetError::BadMagic(images.magic));
        }
        if labels.magic != LABEL_MAGIC {
            return Err(DatasetError::BadMagic(labels.magic));
        }
        let (count, height, width) = (images.dims[0], images.dims[1], images.dims[2]);
        if count != labels.dims[0] {
            return Err(DatasetError::CountMismatch {
                images: count,
                labels: labels.dims[0],
            });
        }
        if let Some(index) = labels.data.iter().position(|&l| l as usize >= NUM_CLASSES) {
            return Err(DatasetError::BadLabel {
                index,
                label: labels.data[index],
            });
        }
        Ok(Self {
            height,
            width,
            images: images.data,
            labels: labels.data,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Normalized images (`[0,1]` floats, channel-last) with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImages {
    pub shape: Shape,
    pub pixels: Vec<f32>,
    pub labels: Vec<u8>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let d = self.shape.len();
        &self.pixels[i * d..(i + 1) * d]
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let d = self.shape.len();
        let mut pixels = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Self {
            shape: self.shape,
            pixels,
            labels,
        }
    }

    /// First `n` samples (or all of them when `n` exceeds the size).
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// `n` samples drawn without replacement by a seeded shuffle, kept in
    /// their original order.
    pub fn sample(&self, n: usize, seed: u64) -> Self {
        if n >= self.len() {
            return self.clone();
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(n);
        idx.sort_unstable();
        self.subset(&idx)
    }
}

pub fn normalize_pixel(p: u8) -> f32 {
    p as f32 / 255.0
}

pub fn normalize(raw: &RawImageSet) -> LabeledImages {
    LabeledImages {
        shape: Shape::new(raw.height, raw.width, 1),
        pixels: raw.images.iter().map(|&p| normalize_pixel(p)).collect(),
        labels: raw.labels.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            validation_fraction: 0.1,
            seed: 7,
        }
    }
}

/// Stratified split returning sorted `(train, validation)` index lists.
pub fn split_indices(labels: &[u8], spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    let f = spec.validation_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(DatasetError::EmptySplit(f));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::with_capacity(labels.len());
    let mut val = Vec::new();
    for class in 0..=u8::MAX {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let n_val = (members.len() as f64 * f).round() as usize;
        val.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..]);
    }
    if train.is_empty() || val.is_empty() {
        return Err(DatasetError::EmptySplit(f));
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

pub fn split(data: &LabeledImages, spec: SplitSpec) -> Result<(LabeledImages, LabeledImages), DatasetError> {
    let (train, val) = split_indices(&data.labels, spec)?;
    Ok((data.subset(&train), data.subset(&val)))
}

/// File names of the four IDX files inside a data directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetFiles {
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
}

impl Default for DatasetFiles {
    fn default() -> Self {
        Self {
            train_images: "train-images-idx3-ubyte.gz".into(),
            train_labels: "train-labels-idx1-ubyte.gz".into(),
            test_images: "t10k-images-idx3-ubyte.gz".into(),
            test_labels: "t10k-labels-idx1-ubyte.gz".into(),
        }
    }
}

pub fn read_idx_file(path: &Path) -> Result<IdxTensor, DatasetError> {
    let bytes = std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_idx(&bytes)
}

/// Loads `(train, test)` raw sets from `dir`.
pub fn load_fashion_mnist(dir: &Path, files: &DatasetFiles) -> Result<(RawImageSet, RawImageSet), DatasetError> {
    let load = |images: &str, labels: &str| {
        RawImageSet::from_idx(read_idx_file(&dir.join(images))?, read_idx_file(&dir.join(labels))?)
    };
    Ok((
        load(&files.train_images, &files.train_labels)?,
        load(&files.test_images, &files.test_labels)?,
    ))
}
