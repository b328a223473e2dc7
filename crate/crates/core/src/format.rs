//! Manifest + blob container shared by `.annw`, `.snnw` and `.emb` files.
//!
//! Layout: `u32` little-endian manifest length, the UTF-8 JSON manifest, then
//! the binary blob. Tensors are little-endian and row-major; the manifest
//! lists every tensor's name, shape, dtype, byte offset and byte length, and
//! carries the CRC32 of the whole blob.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checksum failure: {0}")]
    ChecksumFail(String),
    #[error("expected a {expected} file, found {found}")]
    KindMismatch { expected: String, found: String },
    #[error("tensor {0:?} missing or of the wrong dtype")]
    MissingTensor(String),
    #[error("invalid manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("inconsistent contents: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    I32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub offset: usize,
    pub length: usize,
}

#[derive(Serialize, Deserialize)]
struct Envelope<M> {
    format_version: u32,
    kind: String,
    blob_len: usize,
    blob_crc32: u32,
    tensors: Vec<TensorEntry>,
    #[serde(flatten)]
    meta: M,
}

#[derive(Debug, Default)]
pub struct BlobWriter {
    tensors: Vec<TensorEntry>,
    blob: Vec<u8>,
}

impl BlobWriter {
    pub fn new() -> Self {
        Self::default()
    }

    fn entry(&mut self, name: &str, shape: &[usize], dtype: DType, bytes: usize) {
        self.tensors.push(TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            dtype,
            offset: self.blob.len(),
            length: bytes,
        });
    }

    pub fn push_f32(&mut self, name: &str, shape: &[usize], data: &[f32]) {
        self.entry(name, shape, DType::F32, data.len() * 4);
        self.blob.reserve(data.len() * 4);
        for v in data {
            self.blob.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn push_i32(&mut self, name: &str, shape: &[usize], data: &[i32]) {
        self.entry(name, shape, DType::I32, data.len() * 4);
        self.blob.reserve(data.len() * 4);
        for v in data {
            self.blob.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn finish<M: Serialize>(self, kind: &str, meta: &M) -> Result<Vec<u8>, FormatError> {
        let envelope = Envelope {
            format_version: FORMAT_VERSION,
            kind: kind.to_string(),
            blob_len: self.blob.len(),
            blob_crc32: crc32fast::hash(&self.blob),
            tensors: self.tensors,
            meta,
        };
        let manifest = serde_json::to_vec(&envelope)?;
        let mut out = Vec::with_capacity(4 + manifest.len() + self.blob.len());
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&self.blob);
        Ok(out)
    }
}

#[derive(Debug)]
pub struct BlobReader<'a> {
    tensors: Vec<TensorEntry>,
    blob: &'a [u8],
}

impl<'a> BlobReader<'a> {
    fn find(&self, name: &str, dtype: DType) -> Result<&TensorEntry, FormatError> {
        self.tensors
            .iter()
            .find(|t| t.name == name && t.dtype == dtype)
            .ok_or_else(|| FormatError::MissingTensor(name.to_string()))
    }

    fn words(&self, entry: &TensorEntry) -> Result<impl Iterator<Item = [u8; 4]> + 'a, FormatError> {
        let bytes = self
            .blob
            .get(entry.offset..entry.offset + entry.length)
            .ok_or_else(|| FormatError::Inconsistent(format!("tensor {} out of bounds", entry.name)))?;
        let expected: usize = entry.shape.iter().product::<usize>() * 4;
        if expected != entry.length {
            return Err(FormatError::Inconsistent(format!(
                "tensor {} shape {:?} does not match {} bytes",
                entry.name, entry.shape, entry.length
            )));
        }
        Ok(bytes.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]))
    }

    pub fn f32(&self, name: &str) -> Result<Vec<f32>, FormatError> {
        let entry = self.find(name, DType::F32)?;
        Ok(self.words(entry)?.map(f32::from_le_bytes).collect())
    }

    pub fn i32(&self, name: &str) -> Result<Vec<i32>, FormatError> {
        let entry = self.find(name, DType::I32)?;
        Ok(self.words(entry)?.map(i32::from_le_bytes).collect())
    }

    pub fn shape(&self, name: &str) -> Option<&[usize]> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| t.shape.as_slice())
    }
}

/// Splits and verifies a container, returning its metadata and tensor reader.
pub fn decode<'a, M: DeserializeOwned>(kind: &str, bytes: &'a [u8]) -> Result<(M, BlobReader<'a>), FormatError> {
    let truncated = || FormatError::ChecksumFail("file truncated".into());
    let len_bytes = bytes.get(..4).ok_or_else(truncated)?;
    let manifest_len = u32::from_le_bytes([len_bytes[0], len_bytes[1], len_bytes[2], len_bytes[3]]) as usize;
    let manifest = bytes.get(4..4 + manifest_len).ok_or_else(truncated)?;
    let probe: serde_json::Value = serde_json::from_slice(manifest)
        .map_err(|e| FormatError::ChecksumFail(format!("manifest unreadable: {e}")))?;
    let version = probe
        .get("format_version")
        .and_then(|v| v.as_u64())
        .unwrap_or(0) as u32;
    if version != FORMAT_VERSION {
        return Err(FormatError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let envelope: Envelope<M> = serde_json::from_value(probe)?;
    if envelope.kind != kind {
        return Err(FormatError::KindMismatch {
            expected: kind.to_string(),
            found: envelope.kind,
        });
    }
    let blob = &bytes[4 + manifest_len..];
    if blob.len() != envelope.blob_len {
        return Err(FormatError::ChecksumFail(format!(
            "blob is {} bytes, manifest declares {}",
            blob.len(),
            envelope.blob_len
        )));
    }
    let crc = crc32fast::hash(blob);
    if crc != envelope.blob_crc32 {
        return Err(FormatError::ChecksumFail(format!(
            "crc32 {crc:08x} != declared {:08x}",
            envelope.blob_crc32
        )));
    }
    Ok((
        envelope.meta,
        BlobReader {
            tensors: envelope.tensors,
            blob,
        },
    ))
}
