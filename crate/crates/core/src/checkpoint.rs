//! Versioned binary checkpoint container shared by all fitted models.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "MLCK" | version u32 | meta_len u64 | meta JSON | n_tensors u64
//! per tensor: name_len u64 | name | ndim u64 | dims u64* | data f64*
//! ```
//!
//! Writing is byte-stable: identical models and metadata produce identical
//! files, so reruns can be compared by digest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::nn::{HasTensors, Scalar};

const MAGIC: &[u8; 4] = b"MLCK";
const VERSION: u32 = 1;

/// Training provenance and hyperparameters carried inside a checkpoint.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    /// Model family, e.g. "siamese", "tirr", "lfrr", "recon".
    pub kind: String,
    pub seed: u64,
    pub loss_kind: String,
    pub epochs: usize,
    /// Mean loss per epoch.
    pub loss_log: Vec<f64>,
    /// Digest of the event set this model was fitted on.
    pub trained_on_digest: String,
    /// Free-form extras (side, referenced checkpoint digests, ...).
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("tensor {0} missing from checkpoint")]
    MissingTensor(String),
    #[error("checkpoint digest mismatch: expected {expected}, found {found}")]
    DigestMismatch { expected: String, found: String },
}

/// A parsed checkpoint: metadata plus named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta) -> Self {
        Checkpoint { meta, tensors: Vec::new() }
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.tensors.push((name.into(), shape, data));
    }

    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f64])> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
    }

    /// Capture all tensors (parameters and tracked state) of a model under
    /// a name prefix.
    pub fn capture<F: Scalar>(&mut self, prefix: &str, model: &mut dyn HasTensors<F>) {
        model.visit_tensors(&mut |_, name, shape, vals, _| {
            let data: Vec<f64> = vals.iter().map(|v| v.to_f64_val()).collect();
            self.tensors.push((format!("{prefix}{name}"), shape.to_vec(), data));
        });
    }

    /// Restore a model's tensors from entries under a name prefix.
    pub fn restore<F: Scalar>(&self, prefix: &str, model: &mut dyn HasTensors<F>) -> Result<(), CheckpointError> {
        let mut result = Ok(());
        model.visit_tensors(&mut |_, name, shape, vals, _| {
            if result.is_err() {
                return;
            }
            let full = format!("{prefix}{name}");
            match self.tensor(&full) {
                None => result = Err(CheckpointError::MissingTensor(full)),
                Some((cshape, data)) => {
                    if cshape != shape {
                        result = Err(CheckpointError::ShapeMismatch {
                            name: full,
                            expected: shape.to_vec(),
                            found: cshape.to_vec(),
                        });
                    } else {
                        for (dst, src) in vals.iter_mut().zip(data.iter()) {
                            *dst = F::from_f64(*src);
                        }
                    }
                }
            }
        });
        result
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta).expect("meta serializes");
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, shape, data) in &self.tensors {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u64).to_le_bytes());
            for d in shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = io::Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let meta_len = read_u64(&mut r)? as usize;
        let mut meta_buf = vec![0u8; meta_len];
        r.read_exact(&mut meta_buf)?;
        let meta: CheckpointMeta =
            serde_json::from_slice(&meta_buf).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let n = read_u64(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let name_len = read_u64(&mut r)? as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            let ndim = read_u64(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(&mut r)? as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            let mut buf = [0u8; 8];
            for _ in 0..len {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            tensors.push((name, shape, data));
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let bytes = self.to_bytes();
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    /// Digest of the serialized container; used to chain provenance between
    /// dependent checkpoints.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_bytes());
        hex::encode(hasher.finalize())
    }
}

/// Digest of an existing checkpoint file on disk.
pub fn file_digest(path: &Path) -> Result<String, io::Error> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex::encode(hasher.finalize()))
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
