//! IDX binary tensors (the MNIST distribution format).
//!
//! Layout: two zero bytes, a type code, the number of dimensions, one
//! big-endian `u32` size per dimension, then the row-major payload. Only the
//! unsigned-byte type (`0x08`) is supported. Gzip-compressed files are
//! detected by their `1F 8B` prefix and decompressed transparently.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};

pub const TYPE_U8: u8 = 0x08;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// An unsigned-byte tensor read from an IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    pub fn new(shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        let expected = element_count(&shape)?;
        if expected != data.len() {
            return Err(Error::Idx(format!(
                "shape {shape:?} needs {expected} bytes, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Size of the leading dimension.
    pub fn items(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of bytes per item along the leading dimension.
    pub fn item_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn item(&self, index: usize) -> &[u8] {
        let len = self.item_len();
        &self.data[index * len..(index + 1) * len]
    }
}

fn element_count(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Idx(format!("shape {shape:?} overflows")))
}

fn be_u32(bytes: &[u8], at: usize) -> Result<usize> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .ok_or_else(|| Error::Idx("truncated header".into()))
}

/// Parses an IDX buffer, decompressing it first if it is gzip data.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.starts_with(&GZIP_MAGIC) {
        let mut raw = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut raw)
            .map_err(|e| Error::Idx(format!("gzip stream: {e}")))?;
        return parse_raw(&raw);
    }
    parse_raw(bytes)
}

fn parse_raw(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(Error::Idx("truncated header".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Idx(format!("bad magic {:02x} {:02x}", bytes[0], bytes[1])));
    }
    if bytes[2] != TYPE_U8 {
        return Err(Error::Idx(format!("unsupported type code 0x{:02x}", bytes[2])));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(Error::Idx("zero-dimensional tensor".into()));
    }
    let shape = (0..ndim).map(|d| be_u32(bytes, 4 + 4 * d)).collect::<Result<Vec<_>>>()?;
    let offset = 4 + 4 * ndim;
    let expected = element_count(&shape)?;
    let payload = &bytes[offset..];
    if payload.len() < expected {
        return Err(Error::Idx(format!(
            "truncated payload: expected {expected} bytes, found {}",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::Idx(format!(
            "{} trailing bytes after payload",
            payload.len() - expected
        )));
    }
    Ok(IdxTensor { shape, data: payload.to_vec() })
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxTensor> {
    parse_idx(&fs::read(path)?)
}

/// Serializes a tensor as raw IDX bytes.
pub fn encode_idx(tensor: &IdxTensor) -> Result<Vec<u8>> {
    if tensor.shape.is_empty() || tensor.shape.len() > u8::MAX as usize {
        return Err(Error::Idx(format!("cannot encode {} dimensions", tensor.shape.len())));
    }
    let mut out = vec![0, 0, TYPE_U8, tensor.shape.len() as u8];
    for &d in &tensor.shape {
        let d = u32::try_from(d).map_err(|_| Error::Idx(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&tensor.data);
    Ok(out)
}

/// Serializes a tensor as gzip-compressed IDX bytes.
pub fn encode_idx_gz(tensor: &IdxTensor) -> Result<Vec<u8>> {
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(&encode_idx(tensor)?)?;
    Ok(enc.finish()?)
}
