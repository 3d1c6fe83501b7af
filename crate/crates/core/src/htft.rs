//! `HTFT` dense float32 matrix files.
//!
//! Layout: magic `HTFT`, u32 LE version (1), u64 LE rows, u64 LE cols, then
//! `rows × cols` float32 LE values in row-major order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 4] = b"HTFT";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8;

pub fn write_matrix(path: &Path, m: &Matrix<f32>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::with_capacity(1 << 20, file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(m.rows() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(m.cols() as u64).to_le_bytes()).map_err(io)?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_matrix(path: &Path) -> Result<Matrix<f32>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

/// Decodes an in-memory `HTFT` payload; `context` names the source in errors.
pub fn decode(bytes: &[u8], context: &str) -> Result<Matrix<f32>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(context, "truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(context, "bad magic (expected HTFT)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(context, format!("unsupported version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(context, "shape overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::format(
            context,
            format!(
                "payload is {} bytes, {rows}x{cols} needs {expected}",
                payload.len()
            ),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::from_vec(rows, cols, data)
}
