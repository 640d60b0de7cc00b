//! `EVEC` tensor files: a small self-describing container for f32 arrays.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "EVEC" 0x01 | u32 header_len | header (UTF-8 JSON) | f32 payload, row-major
//! ```
//!
//! The header object carries `shape`, `layout` (always `"row-major"`), `dtype`
//! (always `"f32"`) and an optional `names` list of row labels.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"EVEC";
pub const VERSION: u8 = 0x01;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("bad magic: expected \"EVEC\", found {0:?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported version byte {0:#04x}")]
    UnsupportedVersion(u8),
    #[error("truncated file: {0}")]
    Truncated(&'static str),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("shape {shape:?} implies {expected} values, got {actual}")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("payload has {actual} bytes, expected {expected}")]
    PayloadLength { expected: usize, actual: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    shape: Vec<usize>,
    layout: String,
    dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    names: Option<Vec<String>>,
}

/// An in-memory tensor as stored in an `EVEC` file.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
    pub names: Option<Vec<String>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f32>) -> Result<Self, TensorError> {
        check_shape(&shape, values.len())?;
        Ok(Self {
            shape,
            values,
            names: None,
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Self {
        self.names = Some(names);
        self
    }

    /// Builds a 2-D tensor from equal-length f64 rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    shape: vec![rows.len(), cols],
                    expected: rows.len() * cols,
                    actual: values.len() + row.len(),
                });
            }
            values.extend(row.iter().map(|&v| v as f32));
        }
        Self::new(vec![rows.len(), cols], values)
    }

    /// Splits the payload into rows of the last dimension, widened to f64.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        let cols = self.shape.last().copied().unwrap_or(0);
        if cols == 0 {
            return Vec::new();
        }
        self.values
            .chunks(cols)
            .map(|c| c.iter().map(|&v| f64::from(v)).collect())
            .collect()
    }

    pub fn encode(&self) -> Result<Vec<u8>, TensorError> {
        check_shape(&self.shape, self.values.len())?;
        let header = Header {
            shape: self.shape.clone(),
            layout: "row-major".into(),
            dtype: "f32".into(),
            names: self.names.clone(),
        };
        let header = serde_json::to_vec(&header)
            .map_err(|e| TensorError::InvalidHeader(e.to_string()))?;
        let header_len = u32::try_from(header.len())
            .map_err(|_| TensorError::InvalidHeader("header longer than 4 GiB".into()))?;
        let mut out = Vec::with_capacity(9 + header.len() + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TensorError> {
        if bytes.len() < 4 {
            return Err(TensorError::Truncated("magic"));
        }
        if &bytes[..4] != MAGIC {
            return Err(TensorError::BadMagic(bytes[..4].to_vec()));
        }
        let version = *bytes.get(4).ok_or(TensorError::Truncated("version"))?;
        if version != VERSION {
            return Err(TensorError::UnsupportedVersion(version));
        }
        let len_bytes: [u8; 4] = bytes
            .get(5..9)
            .ok_or(TensorError::Truncated("header length"))?
            .try_into()
            .expect("slice of length 4");
        let header_len = u32::from_le_bytes(len_bytes) as usize;
        let header_end = 9 + header_len;
        let header_bytes = bytes
            .get(9..header_end)
            .ok_or(TensorError::Truncated("header"))?;
        let header: Header = serde_json::from_slice(header_bytes)
            .map_err(|e| TensorError::InvalidHeader(e.to_string()))?;
        if header.layout != "row-major" {
            return Err(TensorError::InvalidHeader(format!(
                "unsupported layout {:?}",
                header.layout
            )));
        }
        if header.dtype != "f32" {
            return Err(TensorError::InvalidHeader(format!(
                "unsupported dtype {:?}",
                header.dtype
            )));
        }
        if header.shape.iter().any(|&d| d == 0) {
            return Err(TensorError::InvalidHeader(
                "shape entries must be positive".into(),
            ));
        }
        let count = element_count(&header.shape)?;
        let payload = &bytes[header_end..];
        let expected = count
            .checked_mul(4)
            .ok_or_else(|| TensorError::InvalidHeader("shape overflows".into()))?;
        if payload.len() != expected {
            return Err(TensorError::PayloadLength {
                expected,
                actual: payload.len(),
            });
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        if let Some(names) = &header.names {
            if names.len() != header.shape[0] {
                return Err(TensorError::InvalidHeader(format!(
                    "{} names for {} rows",
                    names.len(),
                    header.shape[0]
                )));
            }
        }
        Ok(Self {
            shape: header.shape,
            values,
            names: header.names,
        })
    }
}

fn element_count(shape: &[usize]) -> Result<usize, TensorError> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| TensorError::InvalidHeader("shape overflows".into()))
}

fn check_shape(shape: &[usize], len: usize) -> Result<(), TensorError> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(TensorError::InvalidHeader(
            "shape must be a non-empty list of positive integers".into(),
        ));
    }
    let expected = element_count(shape)?;
    if expected != len {
        return Err(TensorError::ShapeMismatch {
            shape: shape.to_vec(),
            expected,
            actual: len,
        });
    }
    Ok(())
}

pub fn write_tensor(
    path: impl AsRef<Path>,
    shape: &[usize],
    values: &[f32],
    names: Option<&[String]>,
) -> Result<(), TensorError> {
    let tensor = Tensor {
        shape: shape.to_vec(),
        values: values.to_vec(),
        names: names.map(<[String]>::to_vec),
    };
    write_tensor_file(path, &tensor)
}

pub fn write_tensor_file(path: impl AsRef<Path>, tensor: &Tensor) -> Result<(), TensorError> {
    let bytes = tensor.encode()?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor, TensorError> {
    Tensor::decode(&fs::read(path)?)
}
