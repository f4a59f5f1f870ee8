//! Parameter checkpoints: a directory holding `tensors.bin` and
//! `manifest.json`.
//!
//! `tensors.bin` starts with the magic `DMMT` and a little-endian `u32`
//! record count. Each record is
//!
//! ```text
//! u32 name_len | name (utf-8) | u8 dtype (0 = f32, 1 = f64) | u32 rank |
//! u64 dim × rank | row-major little-endian data
//! ```
//!
//! The manifest lists names, dtypes and shapes along with free-form
//! metadata (model configuration, answer vocabulary).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DType, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DMMT";
const TENSORS: &str = "tensors.bin";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<ManifestEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub params: ParamStore<T>,
    pub metadata: serde_json::Value,
}

pub fn save_checkpoint<T: Scalar>(
    dir: &Path,
    params: &ParamStore<T>,
    metadata: &serde_json::Value,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    let mut entries = Vec::with_capacity(params.len());
    for (_, name, t) in params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(T::DTYPE.tag());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut buf);
        }
        entries.push(ManifestEntry {
            name: name.to_string(),
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
        });
    }
    let path = dir.join(TENSORS);
    fs::write(&path, buf).map_err(|e| Error::io(path, e))?;
    let manifest = Manifest {
        tensors: entries,
        metadata: metadata.clone(),
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated tensor file at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
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

/// Loads a checkpoint, converting element types if the stored precision
/// differs from `T`.
pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<Checkpoint<T>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let path = dir.join(TENSORS);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = r.u32()? as usize;
    if count != manifest.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, file holds {count}",
            manifest.tensors.len()
        )));
    }
    let mut params = ParamStore::new();
    for entry in &manifest.tensors {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?
            .to_string();
        let dtype = DType::from_tag(r.take(1)?[0])
            .ok_or_else(|| Error::Checkpoint(format!("bad dtype for `{name}`")))?;
        let rank = r.u32()? as usize;
        let shape: Vec<usize> = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<_>>()?;
        if name != entry.name || shape != entry.shape || dtype != entry.dtype {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` disagrees with manifest entry `{}`",
                entry.name
            )));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * dtype.size())?;
        let data: Vec<T> = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| T::of(f32::read_le(c) as f64))
                .collect(),
            DType::F64 => raw.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
        };
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(Checkpoint {
        params,
        metadata: manifest.metadata,
    })
}
