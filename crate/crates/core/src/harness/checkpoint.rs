//! Binary checkpoint format.
//!
//! Layout: 8-byte magic `BTUNETCK`, `u32` format version, `u32` manifest
//! length, UTF-8 JSON manifest, then the tensors as contiguous little-endian
//! `f32` blobs. Manifest offsets are byte offsets from the start of the
//! payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamKind, ParamStore};
use crate::error::{Error, Result};
use crate::models::ModelArchConfig;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"BTUNETCK";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "PRETRAIN")]
    Pretrain,
    #[serde(rename = "FINETUNE")]
    Finetune,
}

/// Named tensors plus the metadata needed to rebuild the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub phase: Phase,
    pub seed: u64,
    pub arch: ModelArchConfig,
    pub params: ParamStore<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: [usize; 4],
    offset: u64,
    dtype: String,
    kind: ParamKind,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    phase: Phase,
    seed: u64,
    arch: ModelArchConfig,
    tensors: Vec<TensorEntry>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(phase: Phase, seed: u64, arch: ModelArchConfig, params: ParamStore<f32>) -> Self {
        Checkpoint {
            phase,
            seed,
            arch,
            params,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::with_capacity(self.params.len());
        let mut offset = 0u64;
        for (name, e) in self.params.iter() {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: e.tensor.shape().0,
                offset,
                dtype: "f32".into(),
                kind: e.kind,
            });
            offset += 4 * e.tensor.len() as u64;
        }
        let manifest = serde_json::to_vec(&Manifest {
            version: FORMAT_VERSION,
            phase: self.phase,
            seed: self.seed,
            arch: self.arch,
            tensors,
        })?;
        let mlen = u32::try_from(manifest.len()).map_err(|_| corrupt("manifest too large"))?;
        let mut out = Vec::with_capacity(HEADER_LEN + manifest.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&mlen.to_le_bytes());
        out.extend_from_slice(&manifest);
        for (_, e) in self.params.iter() {
            for v in e.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(corrupt(format!("file is {} bytes, shorter than the header", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(corrupt(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let mlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let payload_start = HEADER_LEN
            .checked_add(mlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt(format!("manifest length {mlen} exceeds file size")))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..payload_start])
            .map_err(|e| corrupt(format!("invalid manifest: {e}")))?;
        if manifest.version != version {
            return Err(corrupt(format!(
                "manifest version {} disagrees with header version {version}",
                manifest.version
            )));
        }
        manifest.arch.validate()?;
        let payload = &bytes[payload_start..];
        let mut params = ParamStore::new();
        let mut expected_end = 0u64;
        for t in manifest.tensors {
            if t.dtype != "f32" {
                return Err(corrupt(format!("tensor `{}` has unsupported dtype {}", t.name, t.dtype)));
            }
            let [n, h, w, c] = t.shape;
            let numel = n
                .checked_mul(h)
                .and_then(|v| v.checked_mul(w))
                .and_then(|v| v.checked_mul(c))
                .filter(|&v| v > 0)
                .ok_or_else(|| corrupt(format!("tensor `{}` has invalid shape {:?}", t.name, t.shape)))?;
            let len = 4 * numel as u64;
            let end = t
                .offset
                .checked_add(len)
                .filter(|&e| e <= payload.len() as u64)
                .ok_or_else(|| {
                    corrupt(format!(
                        "tensor `{}` bytes {}..{} lie outside the {}-byte payload",
                        t.name,
                        t.offset,
                        t.offset.saturating_add(len),
                        payload.len()
                    ))
                })?;
            expected_end = expected_end.max(end);
            let data = payload[t.offset as usize..end as usize]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            let tensor = Tensor::from_vec(Shape::new(n, h, w, c), data)?;
            params
                .insert(t.name, tensor, t.kind)
                .map_err(|e| corrupt(e.to_string()))?;
        }
        if expected_end != payload.len() as u64 {
            return Err(corrupt(format!(
                "payload has {} bytes, manifest accounts for {expected_end}",
                payload.len()
            )));
        }
        Ok(Checkpoint {
            phase: manifest.phase,
            seed: manifest.seed,
            arch: manifest.arch,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        // Write-then-rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| corrupt(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
