//! IDX tensors: a big-endian magic `0x0000TTNN` (type `TT`, `NN` dimensions), `NN`
//! big-endian `u32` sizes, then the payload in row-major order.
//!
//! Type `0x08` holds unsigned bytes (MNIST). Type `0x0E` holds big-endian `f64` and is
//! used for generated regression data. Files ending in `.gz`, or starting with the gzip
//! header, are inflated transparently.

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const TYPE_U8: u8 = 0x08;
pub const TYPE_F64: u8 = 0x0E;
/// Magic of a 3-D unsigned-byte image tensor.
pub const MAGIC_IMAGES: u32 = 0x0000_0803;
/// Magic of an unsigned-byte label vector.
pub const MAGIC_LABELS: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("truncated at byte {offset}: need {needed} more bytes, {available} available")]
    Truncated { offset: usize, needed: usize, available: usize },
    #[error("bad magic at byte 0: expected {expected:#010x}, found {actual:#010x}")]
    BadMagic { expected: u32, actual: u32 },
    #[error("unsupported element type {0:#04x} at byte 2")]
    UnsupportedType(u8),
    #[error("nonzero leading magic bytes {0:#06x} at byte 0")]
    BadPrefix(u16),
    #[error("{extra} trailing bytes after the payload at byte {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("dimensions {dims:?} overflow the addressable size")]
    Overflow { dims: Vec<u32> },
    #[error("gzip stream is corrupt: {0}")]
    Gzip(std::io::Error),
    #[error("payload has {actual} elements but the dimensions {dims:?} need {expected}")]
    LengthMismatch { dims: Vec<u32>, expected: usize, actual: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    U8(Vec<u8>),
    F64(Vec<f64>),
}

impl IdxData {
    pub fn len(&self) -> usize {
        match self {
            IdxData::U8(v) => v.len(),
            IdxData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn type_code(&self) -> u8 {
        match self {
            IdxData::U8(_) => TYPE_U8,
            IdxData::F64(_) => TYPE_F64,
        }
    }

    /// Elements widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            IdxData::U8(v) => v.iter().map(|&b| b as f64).collect(),
            IdxData::F64(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<u32>,
    pub data: IdxData,
}

impl IdxArray {
    pub fn new(dims: Vec<u32>, data: IdxData) -> Result<Self, IdxError> {
        let expected = element_count(&dims)?;
        if expected != data.len() {
            return Err(IdxError::LengthMismatch { dims, expected, actual: data.len() });
        }
        Ok(Self { dims, data })
    }

    pub fn magic(&self) -> u32 {
        ((self.data.type_code() as u32) << 8) | self.dims.len() as u32
    }

    /// Number of leading items and the flattened size of each.
    pub fn rows_cols(&self) -> (usize, usize) {
        let rows = self.dims.first().copied().unwrap_or(1) as usize;
        let cols = self.dims.iter().skip(1).map(|&d| d as usize).product();
        (rows, cols)
    }
}

fn element_count(dims: &[u32]) -> Result<usize, IdxError> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| IdxError::Overflow { dims: dims.to_vec() })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IdxError> {
        let available = self.bytes.len() - self.offset;
        if n > available {
            return Err(IdxError::Truncated { offset: self.offset, needed: n, available });
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, IdxError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parses an uncompressed IDX byte buffer.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray, IdxError> {
    let mut c = Cursor { bytes, offset: 0 };
    let magic = c.u32()?;
    let prefix = (magic >> 16) as u16;
    if prefix != 0 {
        return Err(IdxError::BadPrefix(prefix));
    }
    let ty = (magic >> 8) as u8;
    let ndims = (magic & 0xFF) as usize;
    let width = match ty {
        TYPE_U8 => 1,
        TYPE_F64 => 8,
        other => return Err(IdxError::UnsupportedType(other)),
    };
    let dims = (0..ndims).map(|_| c.u32()).collect::<Result<Vec<_>, _>>()?;
    let count = element_count(&dims)?;
    let size = count.checked_mul(width).ok_or_else(|| IdxError::Overflow { dims: dims.clone() })?;
    let payload = c.take(size)?;
    if c.offset != bytes.len() {
        return Err(IdxError::TrailingBytes { offset: c.offset, extra: bytes.len() - c.offset });
    }
    let data = match ty {
        TYPE_U8 => IdxData::U8(payload.to_vec()),
        _ => IdxData::F64(
            payload
                .chunks_exact(8)
                .map(|b| f64::from_be_bytes(b.try_into().expect("8 bytes")))
                .collect(),
        ),
    };
    Ok(IdxArray { dims, data })
}

/// Serializes to uncompressed IDX bytes.
pub fn encode_idx(arr: &IdxArray) -> Vec<u8> {
    let width = if arr.data.type_code() == TYPE_U8 { 1 } else { 8 };
    let mut out = Vec::with_capacity(4 + 4 * arr.dims.len() + width * arr.data.len());
    out.extend_from_slice(&arr.magic().to_be_bytes());
    for d in &arr.dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    match &arr.data {
        IdxData::U8(v) => out.extend_from_slice(v),
        IdxData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
    }
    out
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.starts_with(&[0x1f, 0x8b])
}

/// Parses IDX bytes that may be gzip-compressed.
pub fn decode_idx(bytes: &[u8]) -> Result<IdxArray, IdxError> {
    if is_gzip(bytes) {
        let mut raw = Vec::new();
        GzDecoder::new(bytes).read_to_end(&mut raw).map_err(IdxError::Gzip)?;
        parse_idx(&raw)
    } else {
        parse_idx(bytes)
    }
}

pub fn read_idx(path: &Path) -> Result<IdxArray, IdxError> {
    let bytes = std::fs::read(path).map_err(|source| IdxError::Io { path: path.to_path_buf(), source })?;
    decode_idx(&bytes)
}

/// Writes IDX, gzip-compressed when the path ends in `.gz`.
pub fn write_idx(path: &Path, arr: &IdxArray) -> Result<(), IdxError> {
    let io = |source| IdxError::Io { path: path.to_path_buf(), source };
    let raw = encode_idx(arr);
    let bytes = if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&raw).map_err(io)?;
        enc.finish().map_err(io)?
    } else {
        raw
    };
    std::fs::write(path, bytes).map_err(io)
}

/// Reads a file and checks its magic.
pub fn read_idx_expecting(path: &Path, magic: u32) -> Result<IdxArray, IdxError> {
    let arr = read_idx(path)?;
    if arr.magic() != magic {
        return Err(IdxError::BadMagic { expected: magic, actual: arr.magic() });
    }
    Ok(arr)
}
