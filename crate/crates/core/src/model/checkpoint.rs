//! Binary checkpoint container.
//!
//! ```text
//! magic           6 bytes   "LSTCN\0"
//! format_version  u32 LE
//! header_len      u32 LE
//! header          header_len bytes of UTF-8 JSON:
//!                 {"format_version": u32, "config": ModelConfig,
//!                  "metadata": {string: string}}
//! tensor_count    u32 LE
//! per tensor:
//!   name_len      u32 LE
//!   name          name_len bytes of UTF-8
//!   rank          u32 LE
//!   dims          rank x u64 LE
//!   data          prod(dims) x f64 LE, row-major
//! ```
//!
//! Tensors appear in [`MultiBranchTCN::named_tensors`] order. Every name and
//! shape is checked against the header's configuration before any data is
//! accepted, and trailing bytes are rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{init_params, ModelConfig, ModelError, MultiBranchTCN, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"LSTCN\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

pub fn save(model: &MultiBranchTCN, path: &Path) -> Result<()> {
    save_with_metadata(model, path, &BTreeMap::new())
}

/// Saves with free-form string metadata (task, feature settings, ...).
pub fn save_with_metadata(model: &MultiBranchTCN, path: &Path, metadata: &BTreeMap<String, String>) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        metadata: metadata.clone(),
    })
    .map_err(|e| ModelError::Corrupt(e.to_string()))?;
    let tensors = model.named_tensors();
    let mut out = Vec::with_capacity(64 + header.len() + model.param_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
    }
    fs::write(path, out).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(ModelError::Truncated {
                offset: self.pos,
                needed: n - available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn load(path: &Path) -> Result<MultiBranchTCN> {
    load_with_metadata(path).map(|(m, _)| m)
}

pub fn load_with_metadata(path: &Path) -> Result<(MultiBranchTCN, BTreeMap<String, String>)> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse(&bytes)
}

fn parse(bytes: &[u8]) -> Result<(MultiBranchTCN, BTreeMap<String, String>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).map_err(|_| ModelError::BadMagic)? != MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ModelError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = r.u32()? as usize;
    let header: Header =
        serde_json::from_slice(r.take(header_len)?).map_err(|e| ModelError::Corrupt(format!("header: {e}")))?;
    if header.format_version != version {
        return Err(ModelError::Corrupt("header version disagrees with preamble".into()));
    }
    let mut model = init_params(&header.config)?;
    let expected: Vec<(String, Vec<usize>)> = model
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(ModelError::Corrupt(format!(
            "{count} tensors stored, configuration has {}",
            expected.len()
        )));
    }
    let mut loaded = Vec::with_capacity(count);
    for (want_name, want_shape) in &expected {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| ModelError::Corrupt("tensor name is not UTF-8".into()))?;
        if name != want_name {
            return Err(ModelError::Corrupt(format!("expected tensor {want_name}, found {name}")));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if &shape != want_shape {
            return Err(ModelError::ShapeMismatch {
                name: name.to_string(),
                expected: want_shape.clone(),
                found: shape,
            });
        }
        let n: usize = shape.iter().product();
        let data = r.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        loaded.push(Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(ModelError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    for (slot, t) in model.tensors_mut().into_iter().zip(loaded) {
        *slot = t;
    }
    Ok((model, header.metadata))
}
