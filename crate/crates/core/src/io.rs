//! Headerless dense-matrix CSV used for SPD matrices, landmarks, momenta and time series.
//!
//! Values are written with Rust's shortest round-trip float formatting, so a write/read cycle
//! reproduces every entry bit for bit. A first row that does not parse as numbers is treated
//! as a header and skipped on read.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::{Error, Real, Result};

pub fn matrix_to_csv<T: Real>(m: &DMatrix<T>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", m[(i, j)].as_f64());
        }
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv<T: Real>(text: &str, origin: &Path) -> Result<DMatrix<T>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match parsed {
            Ok(vals) => rows.push(vals),
            Err(_) if rows.is_empty() && line_no == 0 => continue,
            Err(_) => return Err(Error::parse(origin, format!("non-numeric entry on line {}", line_no + 1))),
        }
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::parse(origin, format!("row {} has {} columns, expected {ncols}", i + 1, r.len())));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::parse(origin, "non-finite entry"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| T::lit(rows[i][j])))
}

pub fn read_matrix_csv<T: Real>(path: impl AsRef<Path>) -> Result<DMatrix<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    matrix_from_csv(&text, path)
}

pub fn write_matrix_csv<T: Real>(path: impl AsRef<Path>, m: &DMatrix<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, matrix_to_csv(m)).map_err(|e| Error::io(path, e))
}
