//! Single-tensor binary container.
//!
//! Layout, all little-endian: 4 magic bytes, `u32` rank, `rank × u32` dims,
//! then the payload. `KENT` carries `f32` values (embedding bundles); `KEND`
//! carries `f64` values (checkpoints, where parameters must round-trip exactly).

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC_F32: &[u8; 4] = b"KENT";
pub const MAGIC_F64: &[u8; 4] = b"KEND";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn magic(self) -> &'static [u8; 4] {
        match self {
            Precision::F32 => MAGIC_F32,
            Precision::F64 => MAGIC_F64,
        }
    }

    fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BlobError {
    #[error("unrecognized magic bytes {0:?}")]
    BadMagic(Vec<u8>),
    #[error("header truncated")]
    TruncatedHeader,
    #[error("invalid dims {0:?}")]
    BadDims(Vec<usize>),
    #[error("payload is {actual} bytes, header implies {expected}")]
    ByteLength { expected: usize, actual: usize },
}

pub fn encode(t: &Tensor, precision: Precision) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + precision.width() * t.numel());
    out.extend_from_slice(precision.magic());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match precision {
        Precision::F32 => {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Precision::F64 => {
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, BlobError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or(BlobError::TruncatedHeader)
}

/// Decodes a blob. Non-finite payload values are returned as-is; callers
/// validate them with context.
pub fn decode(bytes: &[u8]) -> Result<(Tensor, Precision), BlobError> {
    let magic = bytes.get(..4).ok_or(BlobError::TruncatedHeader)?;
    let precision = if magic == MAGIC_F32 {
        Precision::F32
    } else if magic == MAGIC_F64 {
        Precision::F64
    } else {
        return Err(BlobError::BadMagic(magic.to_vec()));
    };
    let rank = read_u32(bytes, 4)? as usize;
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        dims.push(read_u32(bytes, 8 + 4 * i)? as usize);
    }
    if dims.is_empty() || dims.contains(&0) {
        return Err(BlobError::BadDims(dims));
    }
    let header = 8 + 4 * rank;
    let count: usize = dims.iter().product();
    let expected = count * precision.width();
    let actual = bytes.len() - header;
    if actual != expected {
        return Err(BlobError::ByteLength { expected, actual });
    }
    let payload = &bytes[header..];
    let data: Vec<f64> = match precision {
        Precision::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Precision::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    let t = Tensor::new(dims.clone(), data).map_err(|_| BlobError::BadDims(dims))?;
    Ok((t, precision))
}

pub fn write(path: &Path, t: &Tensor, precision: Precision) -> std::io::Result<()> {
    fs::write(path, encode(t, precision))
}
