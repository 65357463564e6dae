//! Binary container of named arrays.
//!
//! Layout: 8-byte magic, `u32` format version, `u32` header length, a JSON
//! header (free-form config plus the entry table), then the raw
//! little-endian array data at the offsets listed in the header.

use std::io::{Read, Write};

use cmts_core::Scalar;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CMTSCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("bad checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryInfo {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Byte offset into the data section.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: serde_json::Value,
    entries: Vec<EntryInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: serde_json::Value,
    pub tensors: Vec<(String, Tensor<T>)>,
}

fn dtype_size(dtype: &str) -> Option<usize> {
    match dtype {
        "f32" => Some(4),
        "f64" => Some(8),
        _ => None,
    }
}

pub fn write_checkpoint<T: Scalar, W: Write>(
    mut w: W,
    config: &serde_json::Value,
    tensors: &[(String, Tensor<T>)],
) -> Result<(), CheckpointError> {
    let mut data = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        entries.push(EntryInfo {
            name: name.clone(),
            dtype: T::DTYPE.to_string(),
            shape: t.shape().to_vec(),
            offset: data.len(),
        });
        for v in t.data() {
            v.write_le(&mut data);
        }
    }
    let header = serde_json::to_vec(&Header {
        config: config.clone(),
        entries,
    })?;
    let header_len = u32::try_from(header.len()).map_err(|_| CheckpointError::Corrupt("header too large".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&header_len.to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&data)?;
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint, converting stored arrays to `T`.
pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<Checkpoint<T>, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    r.read_exact(&mut word)?;
    let mut header = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut tensors = Vec::with_capacity(header.entries.len());
    for e in header.entries {
        let size = dtype_size(&e.dtype).ok_or_else(|| CheckpointError::Corrupt(format!("unknown dtype {}", e.dtype)))?;
        let n: usize = e.shape.iter().product();
        let end = e.offset + n * size;
        let bytes = data
            .get(e.offset..end)
            .ok_or_else(|| CheckpointError::Corrupt(format!("entry `{}` out of bounds", e.name)))?;
        let values: Vec<T> = bytes
            .chunks_exact(size)
            .map(|b| match size {
                4 => T::of(f32::read_le(b) as f64),
                _ => T::of(f64::read_le(b)),
            })
            .collect();
        let t = Tensor::from_vec(&e.shape, values).map_err(|err| CheckpointError::Corrupt(err.to_string()))?;
        tensors.push((e.name, t));
    }
    Ok(Checkpoint {
        config: header.config,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_version_check() {
        let t = Tensor::from_vec(&[2, 2], vec![1.0f32, -2.5, 3.25, 0.0]).unwrap();
        let cfg = serde_json::json!({"hidden": 4});
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &cfg, &[("w".to_string(), t.clone())]).unwrap();
        let ck: Checkpoint<f32> = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(ck.config, cfg);
        assert_eq!(ck.tensors, vec![("w".to_string(), t)]);

        buf[8] = 99;
        assert!(matches!(
            read_checkpoint::<f32, _>(buf.as_slice()),
            Err(CheckpointError::UnsupportedVersion(99))
        ));
        assert!(matches!(read_checkpoint::<f32, _>(&b"nope0000"[..]), Err(CheckpointError::BadMagic)));
    }
}
