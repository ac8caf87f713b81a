//! IDX tensor container (the MNIST distribution format).
//!
//! Layout: two zero bytes, an element-type byte, a dimension-count byte,
//! one big-endian `u32` per dimension, then the raw elements. Only unsigned
//! byte elements (type `0x08`) are supported.

use std::path::Path;

use crate::{Error, Result};

const UBYTE: u8 = 0x08;
/// Other element types the format defines.
const KNOWN_TYPES: [u8; 5] = [0x09, 0x0B, 0x0C, 0x0D, 0x0E];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    /// Bytes of item `i` along the first dimension.
    pub fn item(&self, i: usize) -> &[u8] {
        let stride: usize = self.dims[1..].iter().product();
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn len(&self) -> usize {
        self.dims[0]
    }

    pub fn is_empty(&self) -> bool {
        self.dims[0] == 0
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![0, 0, UBYTE, self.dims.len() as u8];
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedFile {
            expected: 4,
            found: bytes.len(),
        });
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let bad_magic = || Error::BadMagic(format!("{magic:#010x}"));
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(bad_magic());
    }
    match bytes[2] {
        UBYTE => {}
        t if KNOWN_TYPES.contains(&t) => return Err(Error::UnsupportedElementType(t)),
        _ => return Err(bad_magic()),
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(bad_magic());
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::TruncatedFile {
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(Error::ShapeOverflow {
            rows: dims[0] as u64,
            cols: dims[1..].iter().map(|&d| d as u64).product(),
        })?;
    let expected = header
        .checked_add(count)
        .ok_or(Error::ShapeOverflow { rows: dims[0] as u64, cols: count as u64 })?;
    match bytes.len() {
        len if len < expected => Err(Error::TruncatedFile { expected, found: len }),
        len if len > expected => Err(Error::TrailingData(len - expected)),
        _ => Ok(IdxTensor {
            dims,
            data: bytes[header..].to_vec(),
        }),
    }
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes)
}
