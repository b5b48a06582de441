//! Checkpoint file format.
//!
//! ```text
//! "LDCT" | u32 LE format version | u32 LE header length | header (JSON) | parameter data
//! ```
//!
//! The header records the network config, storage dtype, optional epoch tag and
//! normalization, and every parameter's name, shape and byte offset into the
//! data section. Parameter data is raw little-endian IEEE-754 in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{UNetConfig, UNetParams};
use crate::dataio::Normalization;
use crate::error::{CheckpointError, Error, Result};
use crate::fsutil::write_atomic;
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"LDCT";

/// Extra information stored alongside the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: UNetConfig,
    dtype: String,
    #[serde(flatten)]
    meta: CheckpointMeta,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

pub fn save_checkpoint<T: Scalar>(
    params: &UNetParams<T>,
    meta: &CheckpointMeta,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let width = T::byte_width();
    let mut offset = 0;
    let entries = params
        .iter()
        .map(|(name, t)| {
            let e = ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += t.len() * width;
            e
        })
        .collect();
    let header = Header {
        config: *params.config(),
        dtype: T::DTYPE.to_string(),
        meta: meta.clone(),
        params: entries,
    };
    let header = serde_json::to_vec_pretty(&header).expect("header serializes");

    let mut buf = Vec::with_capacity(12 + header.len() + offset);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for t in params.tensors() {
        for &v in t.data() {
            v.to_le_bytes_vec(&mut buf);
        }
    }
    write_atomic(path, &buf)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(UNetParams<T>, CheckpointMeta)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn decode<T: Scalar>(bytes: &[u8]) -> Result<(UNetParams<T>, CheckpointMeta)> {
    if bytes.len() < 4 {
        return Err(CheckpointError::Truncated.into());
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    if bytes.len() < 12 {
        return Err(CheckpointError::Truncated.into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        }
        .into());
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let data_start = 12 + header_len;
    if bytes.len() < data_start {
        return Err(CheckpointError::Truncated.into());
    }
    let header: Header = serde_json::from_slice(&bytes[12..data_start])
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.dtype != T::DTYPE {
        return Err(CheckpointError::Header(format!(
            "checkpoint stores {} values, requested {}",
            header.dtype,
            T::DTYPE
        ))
        .into());
    }
    header
        .config
        .validate()
        .map_err(|e| CheckpointError::ShapeDisagreement(e.to_string()))?;

    let expected = header.config.param_shapes();
    if expected.len() != header.params.len() {
        return Err(CheckpointError::ShapeDisagreement(format!(
            "config implies {} parameter tensors, header lists {}",
            expected.len(),
            header.params.len()
        ))
        .into());
    }
    let width = T::byte_width();
    let data = &bytes[data_start..];
    let mut named = Vec::with_capacity(expected.len());
    let mut next_offset = 0;
    for ((name, shape), entry) in expected.iter().zip(&header.params) {
        if *name != entry.name || *shape != entry.shape {
            return Err(CheckpointError::ShapeDisagreement(format!(
                "config implies {name} {shape:?}, header has {} {:?}",
                entry.name, entry.shape
            ))
            .into());
        }
        if entry.offset != next_offset {
            return Err(CheckpointError::Header(format!(
                "parameter {} at offset {} (expected {next_offset})",
                entry.name, entry.offset
            ))
            .into());
        }
        let count: usize = shape.iter().product();
        let end = entry.offset + count * width;
        if data.len() < end {
            return Err(CheckpointError::Truncated.into());
        }
        let values = data[entry.offset..end]
            .chunks_exact(width)
            .map(T::from_le_slice)
            .collect();
        named.push((entry.name.clone(), Tensor::from_vec(shape, values)?));
        next_offset = end;
    }
    if data.len() != next_offset {
        return Err(CheckpointError::Header(format!(
            "{} trailing bytes after parameter data",
            data.len() - next_offset
        ))
        .into());
    }
    let params = UNetParams::from_named(header.config, named)?;
    Ok((params, header.meta))
}
