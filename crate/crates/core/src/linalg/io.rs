//! Dense matrix files.
//!
//! Two formats are accepted:
//!
//! * CSV-ish text: one row per line, entries separated by commas and/or
//!   whitespace, with an optional leading line holding just `n`.
//! * `SYMF` binary: the 4 magic bytes `SYMF`, a little-endian `u32` n, then
//!   n·n little-endian `f64` in row-major order.
//!
//! Either way the lower triangle is authoritative and mirrored on load.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::DenseSymmetricMatrix;
use crate::error::{Error, Result};

pub const SYMF_MAGIC: &[u8; 4] = b"SYMF";

/// Loads a matrix, sniffing the `SYMF` magic to choose the format.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<DenseSymmetricMatrix> {
    let bytes = fs::read(path.as_ref())?;
    if bytes.starts_with(SYMF_MAGIC) {
        read_symf(&bytes)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::validation("matrix file is neither SYMF nor UTF-8 text"))?;
        parse_matrix_csv(&text)
    }
}

pub fn read_symf(bytes: &[u8]) -> Result<DenseSymmetricMatrix> {
    if bytes.len() < 8 || &bytes[..4] != SYMF_MAGIC {
        return Err(Error::validation("missing SYMF header"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = 8 + n * n * 8;
    if bytes.len() != expected {
        return Err(Error::validation(format!(
            "SYMF payload for n={n} must be {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let data = bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseSymmetricMatrix::from_row_major(n, data)
}

pub fn write_symf(m: &DenseSymmetricMatrix) -> Vec<u8> {
    let n = m.dim();
    let mut out = Vec::with_capacity(8 + n * n * 8);
    out.extend_from_slice(SYMF_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for v in m.as_matrix().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn tokens(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
}

pub fn parse_matrix_csv(text: &str) -> Result<DenseSymmetricMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = tokens(line)
            .map(|t| {
                t.parse::<f64>().map_err(|_| {
                    Error::validation(format!("line {}: cannot parse {t:?} as a real", lineno + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::validation("empty matrix file"));
    }
    // An optional header row carries only n.
    if rows.len() > 1 && rows[0].len() == 1 {
        let h = rows[0][0];
        if h.fract() == 0.0 && h >= 1.0 && h as usize == rows.len() - 1 {
            rows.remove(0);
        }
    }
    let n = rows.len();
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(Error::shape(format!(
            "matrix must be square: row {} has {} entries, expected {n}",
            i + 1,
            r.len()
        )));
    }
    DenseSymmetricMatrix::from_row_major(n, rows.into_iter().flatten().collect())
}

pub fn write_matrix_csv(m: &DenseSymmetricMatrix, mut w: impl Write) -> Result<()> {
    let n = m.dim();
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| format!("{:?}", m.get(i, j))).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
