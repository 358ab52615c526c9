//! Portable dense matrix container.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | content                          |
//! |--------|------|----------------------------------|
//! | 0      | 8    | magic `LSKMAT01`                 |
//! | 8      | 1    | dtype (`1` = f64)                |
//! | 9      | 7    | reserved, zero                   |
//! | 16     | 8    | rows (u64)                       |
//! | 24     | 8    | cols (u64)                       |
//! | 32     | 8·rows·cols | row-major f64 payload     |

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LSKMAT01";
pub const DTYPE_F64: u8 = 1;
pub const HEADER_LEN: usize = 32;

pub fn to_bytes(m: &DMatrix<f64>) -> Vec<u8> {
    let (rows, cols) = m.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + rows * cols * 8);
    out.extend_from_slice(MAGIC);
    out.push(DTYPE_F64);
    out.extend_from_slice(&[0u8; 7]);
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    for r in 0..rows {
        for c in 0..cols {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Container(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Container("bad magic".into()));
    }
    if bytes[8] != DTYPE_F64 {
        return Err(Error::Container(format!("unsupported dtype {}", bytes[8])));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let (rows, cols) = (word(16), word(24));
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| Error::Container("dimensions overflow".into()))?;
    if expected != bytes.len() as u64 {
        return Err(Error::Container(format!(
            "{rows}x{cols} payload needs {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let payload = &bytes[HEADER_LEN..];
    Ok(DMatrix::from_fn(rows, cols, |r, c| {
        let at = (r * cols + c) * 8;
        f64::from_le_bytes(payload[at..at + 8].try_into().expect("8 bytes"))
    }))
}

/// sha256 of the container encoding.
pub fn matrix_hash(m: &DMatrix<f64>) -> String {
    super::sha256_hex(&to_bytes(m))
}

/// Writes atomically and returns the sha256 of the written bytes.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<String> {
    let bytes = to_bytes(m);
    super::atomic_write(path, &bytes)?;
    Ok(super::sha256_hex(&bytes))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| Error::Container(format!("{}: {e}", path.display())))
}

/// Vectors are stored as single-column matrices.
pub fn write_vector(path: &Path, v: &DVector<f64>) -> Result<String> {
    write_matrix(path, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}

pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix(path)?;
    if m.ncols() != 1 {
        return Err(Error::Container(format!("{}: expected one column, found {}", path.display(), m.ncols())));
    }
    Ok(m.column(0).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = to_bytes(&m);
        assert_eq!(b.len(), 32 + 48);
        assert_eq!(&b[..8], b"LSKMAT01");
        assert_eq!(b[8], 1);
        assert_eq!(&b[16..24], &2u64.to_le_bytes());
        assert_eq!(&b[24..32], &3u64.to_le_bytes());
        // Row-major: the second value is m[(0, 1)].
        assert_eq!(&b[40..48], &2.0f64.to_le_bytes());
    }

    #[test]
    fn rejects_bad_input() {
        let mut b = to_bytes(&DMatrix::identity(2, 2));
        assert!(from_bytes(&b[..31]).is_err());
        b.push(0);
        assert!(from_bytes(&b).is_err());
        b.pop();
        b[0] = b'X';
        assert!(from_bytes(&b).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/v.lskm");
        let v = DVector::from_vec(vec![0.1, -2.5e-300, f64::MAX]);
        write_vector(&p, &v).unwrap();
        assert_eq!(read_vector(&p).unwrap(), v);
    }
}
