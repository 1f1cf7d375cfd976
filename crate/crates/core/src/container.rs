//! Binary tensor container shared by checkpoints and feature files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes     | content                                              |
//! |-----------|------------------------------------------------------|
//! | 0..8      | magic, identifies the file kind                      |
//! | 8..16     | `u64` length `N` of the JSON header                  |
//! | 16..16+N  | UTF-8 JSON: `{"meta": ..., "tensors": [...]}`        |
//! | rest      | `f32` payload; each tensor at its header `offset`    |
//!
//! Each `tensors` entry is `{"name", "shape", "offset"}` with `offset`
//! counted in `f32` elements from the start of the payload. JSON objects
//! are written with sorted keys, so encoding is deterministic.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: Value,
    tensors: Vec<Slot>,
}

#[derive(Serialize, Deserialize)]
struct Slot {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

pub fn encode(magic: &[u8; 8], meta: &Value, tensors: &[TensorRecord]) -> Result<Vec<u8>> {
    let mut offset = 0;
    let mut slots = Vec::with_capacity(tensors.len());
    for t in tensors {
        let n: usize = t.shape.iter().product();
        if n != t.data.len() {
            return Err(Error::shape("container tensor", n, t.data.len()));
        }
        slots.push(Slot {
            name: t.name.clone(),
            shape: t.shape.clone(),
            offset,
        });
        offset += n;
    }
    let header = serde_json::to_vec(&Header {
        meta: meta.clone(),
        tensors: slots,
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + 4 * offset);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], magic: &[u8; 8]) -> Result<(Value, Vec<TensorRecord>)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != magic {
        return Err(bad("unrecognised file (bad magic)"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..header_end])?;
    let payload = &bytes[header_end..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    let mut expected_end = 0;
    for slot in header.tensors {
        let n: usize = slot.shape.iter().product();
        let (start, end) = (4 * slot.offset, 4 * (slot.offset + n));
        if end > payload.len() {
            return Err(bad(&format!("tensor `{}` extends past end of file", slot.name)));
        }
        let data = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        expected_end = expected_end.max(end);
        tensors.push(TensorRecord {
            name: slot.name,
            shape: slot.shape,
            data,
        });
    }
    if expected_end != payload.len() {
        return Err(bad("trailing bytes after payload"));
    }
    Ok((header.meta, tensors))
}

/// Writes atomically: the bytes go to a temporary file in the same
/// directory, are flushed to disk, then renamed over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn read(path: &Path, magic: &[u8; 8]) -> Result<(Value, Vec<TensorRecord>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, magic)
}
