//! GPFF: a small framed tensor file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "GPFF" | version u8 = 1 | dtype u8 | rank u8 | dims: rank x u64 | payload | crc32(payload) u32
//! ```
//!
//! dtype 0 is float32, 1 is int32 and 2 is raw bytes. The payload is
//! row-major.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{FeatureField, Granularity};

pub const MAGIC: &[u8; 4] = b"GPFF";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I32(Vec<i32>),
    U8(Vec<u8>),
}

impl TensorData {
    fn dtype(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::I32(_) => 1,
            TensorData::U8(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u64>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<u64>, data: TensorData) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(Error::param("tensor rank exceeds 255"));
        }
        let expected: u64 = dims.iter().product();
        if expected != data.len() as u64 {
            return Err(Error::param(format!(
                "dims {dims:?} describe {expected} elements but {} were given",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn f32(dims: Vec<u64>, values: Vec<f32>) -> Result<Self> {
        Self::new(dims, TensorData::F32(values))
    }

    pub fn bytes(values: Vec<u8>) -> Self {
        Self { dims: vec![values.len() as u64], data: TensorData::U8(values) }
    }

    pub fn from_field(field: &FeatureField) -> Self {
        Self {
            dims: vec![field.rows() as u64, field.dim() as u64],
            data: TensorData::F32(field.values().iter().map(|&v| v as f32).collect()),
        }
    }

    /// Interprets a rank-2 float tensor as a point field. All-zero rows are
    /// marked uncovered.
    pub fn to_field(&self, granularity: Granularity) -> Result<FeatureField> {
        let TensorData::F32(values) = &self.data else {
            return Err(Error::format("expected a float32 tensor"));
        };
        if self.dims.len() != 2 {
            return Err(Error::format(format!("expected rank 2, found rank {}", self.dims.len())));
        }
        let dim = self.dims[1] as usize;
        let values: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let coverage = values.chunks_exact(dim.max(1)).map(|r| r.iter().any(|&v| v != 0.0)).collect();
        FeatureField::with_coverage(values, dim, granularity, coverage)
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            _ => Err(Error::format("expected a float32 tensor")),
        }
    }

    pub fn as_bytes(&self) -> Result<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Ok(v),
            _ => Err(Error::format("expected a byte tensor")),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::with_capacity(self.data.len() * 4);
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes())),
            TensorData::I32(v) => v.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => payload.extend_from_slice(v),
        }
        let mut out = Vec::with_capacity(7 + 8 * self.dims.len() + payload.len() + 4);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.data.dtype());
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&payload);
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 7 || &bytes[..4] != MAGIC {
            return Err(Error::format("missing GPFF magic"));
        }
        if bytes[4] != VERSION {
            return Err(Error::format(format!("unsupported GPFF version {}", bytes[4])));
        }
        let dtype = bytes[5];
        let rank = bytes[6] as usize;
        let header = 7 + 8 * rank;
        if bytes.len() < header + 4 {
            return Err(Error::format("truncated GPFF header"));
        }
        let dims: Vec<u64> = (0..rank)
            .map(|k| u64::from_le_bytes(bytes[7 + 8 * k..15 + 8 * k].try_into().expect("8 bytes")))
            .collect();
        let elem = match dtype {
            0 | 1 => 4u64,
            2 => 1,
            other => return Err(Error::format(format!("unknown GPFF dtype {other}"))),
        };
        let count = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format("GPFF dims overflow"))?;
        let size = count
            .checked_mul(elem)
            .ok_or_else(|| Error::format("GPFF dims overflow"))?;
        if (bytes.len() - header - 4) as u64 != size {
            return Err(Error::format(format!(
                "declared payload of {size} bytes but found {}",
                bytes.len() - header - 4
            )));
        }
        let payload = &bytes[header..bytes.len() - 4];
        let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        if crc32fast::hash(payload) != crc {
            return Err(Error::format("GPFF checksum mismatch"));
        }
        let data = match dtype {
            0 => TensorData::F32(
                payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect(),
            ),
            1 => TensorData::I32(
                payload.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().expect("4"))).collect(),
            ),
            _ => TensorData::U8(payload.to_vec()),
        };
        Ok(Self { dims, data })
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
