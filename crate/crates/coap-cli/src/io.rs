//! Matrix and vector file I/O.
//!
//! Dense matrices are stored as header-less CSV with reals serialized at
//! 17 significant digits, which round-trips every f64 bit-exactly. Count
//! matrices may instead be supplied in MatrixMarket coordinate format
//! (detected by the `%%MatrixMarket` banner) and are densified on read.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::CliError;

/// 17 significant digits: the shortest width that round-trips every f64.
fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<(), CliError> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", fmt_real(m[(i, j)]));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CliError::io(path, e))
}

pub fn write_vector(path: &Path, v: &DVector<f64>) -> Result<(), CliError> {
    let mut out = String::new();
    for x in v.iter() {
        out.push_str(&fmt_real(*x));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CliError::io(path, e))
}

pub fn write_series(path: &Path, values: &[f64]) -> Result<(), CliError> {
    write_vector(path, &DVector::from_column_slice(values))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    if text.starts_with("%%MatrixMarket") {
        return read_matrix_market(path, &text);
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, CliError> = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| {
                    CliError::usage(format!(
                        "{}:{}: cannot parse '{}' as a real number",
                        path.display(),
                        lineno + 1,
                        tok.trim()
                    ))
                })
            })
            .collect();
        rows.push(row?);
    }
    if rows.is_empty() {
        return Err(CliError::usage(format!("{}: empty matrix file", path.display())));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::usage(format!(
            "{}: rows have inconsistent column counts",
            path.display()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn read_vector(path: &Path) -> Result<DVector<f64>, CliError> {
    let m = read_matrix(path)?;
    if m.ncols() != 1 {
        return Err(CliError::usage(format!(
            "{}: expected a single-column vector, found {} columns",
            path.display(),
            m.ncols()
        )));
    }
    Ok(DVector::from_column_slice(m.column(0).as_slice()))
}

fn read_matrix_market(path: &Path, text: &str) -> Result<DMatrix<f64>, CliError> {
    let bad = |msg: &str| CliError::usage(format!("{}: {msg}", path.display()));
    let banner = text.lines().next().unwrap_or_default();
    let lower = banner.to_ascii_lowercase();
    if !lower.contains("coordinate") || !lower.contains("general") {
        return Err(bad("only MatrixMarket 'coordinate ... general' files are supported"));
    }
    let mut lines = text.lines().skip(1).filter(|l| !l.starts_with('%') && !l.trim().is_empty());
    let size = lines.next().ok_or_else(|| bad("missing size line"))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| bad("malformed size line")))
        .collect::<Result<_, _>>()?;
    if dims.len() != 3 {
        return Err(bad("size line must be 'rows cols nnz'"));
    }
    let (nrows, ncols, nnz) = (dims[0], dims[1], dims[2]);
    let mut m = DMatrix::zeros(nrows, ncols);
    let mut seen = 0usize;
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(bad("entries must be 'row col value'"));
        }
        let i: usize = toks[0].parse().map_err(|_| bad("malformed row index"))?;
        let j: usize = toks[1].parse().map_err(|_| bad("malformed column index"))?;
        let v: f64 = toks[2].parse().map_err(|_| bad("malformed value"))?;
        if i == 0 || j == 0 || i > nrows || j > ncols {
            return Err(bad("entry index out of bounds (indices are 1-based)"));
        }
        m[(i - 1, j - 1)] = v;
        seen += 1;
    }
    if seen != nnz {
        return Err(bad("entry count does not match the size line"));
    }
    Ok(m)
}
