//! Self-describing binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then the raw little-endian tensor blob. The header carries the
//! kind, step, config fingerprint, free-form metadata and a tensor index.

use std::io::{Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::tensor_bytes;

const MAGIC: &[u8; 8] = b"DRYFLOW\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Encoder,
    Flow,
    Normalization,
    /// Resumable training state: weights plus optimizer moments.
    TrainingState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: CheckpointKind,
    step: usize,
    fingerprint: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub step: usize,
    pub fingerprint: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(kind: CheckpointKind, step: usize, fingerprint: impl Into<String>) -> Self {
        Self {
            kind,
            step,
            fingerprint: fingerprint.into(),
            meta: serde_json::Value::Null,
            tensors: Vec::new(),
        }
    }

    pub fn with_meta<T: Serialize>(mut self, meta: &T) -> Result<Self> {
        self.meta = serde_json::to_value(meta)
            .map_err(|e| Error::Data(format!("cannot serialise checkpoint metadata: {e}")))?;
        Ok(self)
    }

    pub fn with_tensors(mut self, tensors: Vec<(String, Tensor)>) -> Self {
        self.tensors = tensors;
        self
    }

    pub fn meta_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        serde_json::from_value(self.meta.clone())
            .map_err(|e| Error::Data(format!("checkpoint metadata: {e}")))
    }

    /// Tensors whose names start with `prefix`, with the prefix removed.
    pub fn tensors_with_prefix(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.tensors
            .iter()
            .filter_map(|(k, t)| k.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
            .collect()
    }

    /// SHA-256 over tensor names, shapes and bytes in stored order.
    pub fn weights_checksum(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update(name.as_bytes());
            for d in t.dims() {
                h.update((*d as u64).to_le_bytes());
            }
            h.update(tensor_bytes(t)?);
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let dtype = match t.dtype() {
                DType::F64 => "f64",
                _ => "f32",
            };
            let bytes = tensor_bytes(t)?;
            entries.push(TensorEntry {
                name: name.clone(),
                dtype: dtype.into(),
                shape: t.dims().to_vec(),
                offset: blob.len() as u64,
                len: bytes.len() as u64,
            });
            blob.extend_from_slice(&bytes);
        }
        let header = Header {
            kind: self.kind,
            step: self.step,
            fingerprint: self.fingerprint.clone(),
            meta: self.meta.clone(),
            tensors: entries,
        };
        let header = serde_json::to_vec(&header).expect("header is always serialisable");

        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut write = |b: &[u8]| f.write_all(b).map_err(|e| Error::io(path, e));
        write(MAGIC)?;
        write(&FORMAT_VERSION.to_le_bytes())?;
        write(&(header.len() as u64).to_le_bytes())?;
        write(&header)?;
        write(&blob)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |detail: String| Error::Checkpoint {
            path: path.to_path_buf(),
            detail,
        };
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: Header =
            serde_json::from_slice(&bytes[20..body]).map_err(|e| bad(format!("header: {e}")))?;
        let blob = &bytes[body..];

        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let start = e.offset as usize;
            let end = start + e.len as usize;
            if end > blob.len() {
                return Err(bad(format!("tensor {} runs past end of file", e.name)));
            }
            let raw = &blob[start..end];
            let n: usize = e.shape.iter().product();
            let t = match e.dtype.as_str() {
                "f64" if raw.len() == 8 * n => {
                    let v: Vec<f64> = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    Tensor::from_vec(v, e.shape.as_slice(), &Device::Cpu)?
                }
                "f32" if raw.len() == 4 * n => {
                    let v: Vec<f32> = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    Tensor::from_vec(v, e.shape.as_slice(), &Device::Cpu)?
                }
                other => return Err(bad(format!("tensor {}: bad dtype or length ({other})", e.name))),
            };
            tensors.push((e.name, t));
        }
        Ok(Self {
            kind: header.kind,
            step: header.step,
            fingerprint: header.fingerprint,
            meta: header.meta,
            tensors,
        })
    }

    /// Loads and checks the kind.
    pub fn load_kind(path: impl AsRef<Path>, kind: CheckpointKind) -> Result<Self> {
        let path = path.as_ref();
        let ck = Self::load(path)?;
        if ck.kind != kind {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                detail: format!("expected a {kind:?} checkpoint, found {:?}", ck.kind),
            });
        }
        Ok(ck)
    }

    pub fn require_fingerprint(&self, expected: &str) -> Result<()> {
        if self.fingerprint != expected {
            return Err(Error::Fingerprint {
                expected: expected.into(),
                found: self.fingerprint.clone(),
            });
        }
        Ok(())
    }
}

/// Hex SHA-256 of the JSON encodings of `parts`, in order.
pub fn fingerprint_of<T: Serialize + ?Sized>(parts: &[&T]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(serde_json::to_vec(p).expect("fingerprinted values serialise"));
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}
