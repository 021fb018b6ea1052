//! Binary feature tensors: a 16-byte magic, one JSON header line with the
//! shape, then the row-major data as little-endian `f64`.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{DenseArray, NumericsError};

pub const MAGIC: &[u8; 16] = b"MLLM_LAB_TENSOR1";
const MAX_HEADER: u64 = 4096;

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic, not a tensor file")]
    Magic,
    #[error("bad header: {0}")]
    Header(String),
    #[error("expected {expected} values, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    shape: Vec<usize>,
}

pub fn write_tensor<W: Write>(mut w: W, a: &DenseArray) -> Result<(), TensorFileError> {
    w.write_all(MAGIC)?;
    let header = serde_json::to_string(&Header {
        shape: a.shape().to_vec(),
    })
    .map_err(|e| TensorFileError::Header(e.to_string()))?;
    w.write_all(header.as_bytes())?;
    w.write_all(b"\n")?;
    for v in a.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor<R: Read>(r: R) -> Result<DenseArray, TensorFileError> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 16];
    r.read_exact(&mut magic)
        .map_err(|_| TensorFileError::Magic)?;
    if &magic != MAGIC {
        return Err(TensorFileError::Magic);
    }
    let mut line = String::new();
    (&mut r).take(MAX_HEADER).read_line(&mut line)?;
    if !line.ends_with('\n') {
        return Err(TensorFileError::Header("missing header newline".into()));
    }
    let header: Header = serde_json::from_str(line.trim_end())
        .map_err(|e| TensorFileError::Header(e.to_string()))?;
    let expected = header
        .shape
        .iter()
        .try_fold(1usize, |acc, d| acc.checked_mul(*d))
        .ok_or_else(|| TensorFileError::Header("shape overflows".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != expected * 8 {
        return Err(TensorFileError::Truncated {
            expected,
            found: bytes.len() / 8,
        });
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(DenseArray::new(header.shape, data)?)
}
