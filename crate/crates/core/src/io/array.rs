//! `PRSPAR01` binary arrays: an 8-byte magic, `u64` rows and columns (little
//! endian), then row-major little-endian `f64` payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const MAGIC: &[u8; 8] = b"PRSPAR01";
pub const HEADER_LEN: usize = 24;

pub fn encode_array(m: &DenseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn is_array_bytes(bytes: &[u8]) -> bool {
    bytes.starts_with(MAGIC)
}

pub fn decode_array(bytes: &[u8]) -> Result<DenseMatrix> {
    if !is_array_bytes(bytes) {
        return Err(Error::data("not a PRSPAR01 file"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::data("truncated PRSPAR01 header"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8-byte slice"));
    let (rows, cols) = (word(8), word(16));
    let count = rows
        .checked_mul(cols)
        .and_then(|c| usize::try_from(c).ok())
        .ok_or_else(|| Error::data("PRSPAR01 shape overflows"))?;
    let payload = &bytes[HEADER_LEN..];
    if count.checked_mul(8) != Some(payload.len()) {
        return Err(Error::data(format!(
            "PRSPAR01 payload has {} bytes, header says {rows}x{cols}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    DenseMatrix::new(rows as usize, cols as usize, data)
}

pub fn save_array(path: &Path, m: &DenseMatrix) -> Result<()> {
    fs::write(path, encode_array(m)).map_err(|e| Error::io(path, e))
}

pub fn load_array(path: &Path) -> Result<DenseMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_array(&bytes)
}
