//! `PTNS` tensor container.
//!
//! Layout (little-endian): magic `PTNS`, version `u8 = 1`, dtype `u8`,
//! ndim `u32`, `ndim` × `u32` dims, then the row-major payload.

use std::path::Path;

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};

pub const PTNS_MAGIC: [u8; 4] = *b"PTNS";
pub const PTNS_VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 0;
pub const DTYPE_U8: u8 = 1;

const FIXED_HEADER: usize = 4 + 1 + 1 + 4;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> u8 {
        match self {
            TensorData::F32(_) => DTYPE_F32,
            TensorData::U8(_) => DTYPE_U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn dtype_size(dtype: u8) -> Result<usize> {
    match dtype {
        DTYPE_F32 => Ok(4),
        DTYPE_U8 => Ok(1),
        other => Err(Error::UnsupportedDtype(other)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<u32>,
    pub data: TensorData,
}

impl TensorFile {
    pub fn new(dims: Vec<u32>, data: TensorData) -> Result<Self> {
        let expected = element_count(&dims)?;
        if expected != data.len() {
            return Err(Error::SizeMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn f32(dims: Vec<u32>, values: Vec<f32>) -> Result<Self> {
        Self::new(dims, TensorData::F32(values))
    }

    pub fn u8(dims: Vec<u32>, values: Vec<u8>) -> Result<Self> {
        Self::new(dims, TensorData::U8(values))
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            other => Err(Error::UnsupportedDtype(other.dtype())),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Ok(v),
            other => Err(Error::UnsupportedDtype(other.dtype())),
        }
    }

    /// Checks the rank and returns the dims as `usize`.
    pub fn shape<const R: usize>(&self) -> Result<[usize; R]> {
        if self.dims.len() != R {
            return Err(Error::DimMismatch(format!(
                "expected a rank-{R} tensor, found rank {}",
                self.dims.len()
            )));
        }
        Ok(std::array::from_fn(|i| self.dims[i] as usize))
    }
}

fn element_count(dims: &[u32]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| Error::DimMismatch(format!("dims {dims:?} overflow")))
}

pub fn encode_tensor(t: &TensorFile) -> Vec<u8> {
    let mut out = Vec::with_capacity(FIXED_HEADER + 4 * t.dims.len() + 4 * t.data.len());
    out.extend_from_slice(&PTNS_MAGIC);
    out.push(PTNS_VERSION);
    out.push(t.data.dtype());
    out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for d in &t.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    match &t.data {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::U8(v) => out.extend_from_slice(v),
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<TensorFile> {
    if bytes.len() < 4 {
        return Err(Error::SizeMismatch {
            expected: FIXED_HEADER,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != PTNS_MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    if bytes.len() < FIXED_HEADER {
        return Err(Error::SizeMismatch {
            expected: FIXED_HEADER,
            found: bytes.len(),
        });
    }
    if bytes[4] != PTNS_VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    let dtype = bytes[5];
    let elem = dtype_size(dtype)?;
    let ndim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let header = ndim
        .checked_mul(4)
        .and_then(|d| d.checked_add(FIXED_HEADER))
        .ok_or_else(|| Error::DimMismatch(format!("ndim {ndim} overflows")))?;
    if bytes.len() < header {
        return Err(Error::SizeMismatch {
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<u32> = bytes[FIXED_HEADER..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let payload = &bytes[header..];
    let expected = element_count(&dims)?
        .checked_mul(elem)
        .ok_or_else(|| Error::DimMismatch(format!("dims {dims:?} overflow")))?;
    if payload.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            found: payload.len(),
        });
    }
    let data = match dtype {
        DTYPE_F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        _ => TensorData::U8(payload.to_vec()),
    };
    Ok(TensorFile { dims, data })
}

pub fn read_tensor(path: &Path) -> Result<TensorFile> {
    decode_tensor(&read_bytes(path)?)
}

pub fn write_tensor(t: &TensorFile, path: &Path) -> Result<()> {
    write_atomic(path, &encode_tensor(t))
}
