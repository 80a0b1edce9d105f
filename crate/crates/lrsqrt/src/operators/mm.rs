//! Matrix Market array-format I/O for dense matrices and vectors.
//!
//! Supports `matrix array real general` and `matrix array real symmetric`
//! headers. Symmetric files store the lower triangle column-major per the
//! format; readers mirror it. Values are written with 17 significant digits
//! so write/read round-trips are exact in f64.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn bad(line: usize, msg: impl Into<String>) -> Error {
    Error::MatrixMarket {
        line,
        msg: msg.into(),
    }
}

/// Write a dense matrix in `array real general` layout (column-major).
pub fn write_matrix<W: Write>(out: &mut W, m: &DMatrix<f64>) -> Result<()> {
    writeln!(out, "%%MatrixMarket matrix array real general")?;
    writeln!(out, "{} {}", m.nrows(), m.ncols())?;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            writeln!(out, "{:.16e}", m[(i, j)])?;
        }
    }
    Ok(())
}

/// Write a square symmetric matrix in `array real symmetric` layout
/// (lower triangle, column-major).
pub fn write_symmetric<W: Write>(out: &mut W, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "symmetric write needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    writeln!(out, "%%MatrixMarket matrix array real symmetric")?;
    writeln!(out, "{} {}", m.nrows(), m.ncols())?;
    for j in 0..m.ncols() {
        for i in j..m.nrows() {
            writeln!(out, "{:.16e}", m[(i, j)])?;
        }
    }
    Ok(())
}

pub fn write_vector<W: Write>(out: &mut W, v: &DVector<f64>) -> Result<()> {
    let m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    write_matrix(out, &m)
}

struct Tokens<R: BufRead> {
    reader: R,
    line: usize,
    buf: Vec<String>,
    at: usize,
}

impl<R: BufRead> Tokens<R> {
    fn new(reader: R) -> Self {
        Tokens {
            reader,
            line: 0,
            buf: Vec::new(),
            at: 0,
        }
    }

    /// Next non-comment line split into tokens; `None` at EOF.
    fn refill(&mut self) -> Result<bool> {
        loop {
            let mut s = String::new();
            let n = self.reader.read_line(&mut s)?;
            if n == 0 {
                return Ok(false);
            }
            self.line += 1;
            let trimmed = s.trim();
            if trimmed.is_empty() || trimmed.starts_with('%') {
                continue;
            }
            self.buf = trimmed.split_whitespace().map(str::to_owned).collect();
            self.at = 0;
            return Ok(true);
        }
    }

    fn next(&mut self) -> Result<String> {
        while self.at >= self.buf.len() {
            if !self.refill()? {
                return Err(bad(self.line, "unexpected end of file"));
            }
        }
        let tok = self.buf[self.at].clone();
        self.at += 1;
        Ok(tok)
    }

    fn next_usize(&mut self) -> Result<usize> {
        let tok = self.next()?;
        tok.parse()
            .map_err(|_| bad(self.line, format!("expected a dimension, got '{tok}'")))
    }

    fn next_f64(&mut self) -> Result<f64> {
        let tok = self.next()?;
        tok.parse()
            .map_err(|_| bad(self.line, format!("expected a real value, got '{tok}'")))
    }
}

/// Read a dense matrix from `array real general|symmetric` input.
pub fn read_matrix<R: BufRead>(input: R) -> Result<DMatrix<f64>> {
    let mut reader = input;
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let fields: Vec<String> = header.split_whitespace().map(str::to_lowercase).collect();
    if fields.len() != 5 || fields[0] != "%%matrixmarket" {
        return Err(bad(1, "missing %%MatrixMarket header"));
    }
    if fields[1] != "matrix" || fields[2] != "array" {
        return Err(bad(
            1,
            format!("only dense 'matrix array' files are supported, got '{} {}'", fields[1], fields[2]),
        ));
    }
    if fields[3] != "real" {
        return Err(bad(1, format!("only real entries are supported, got '{}'", fields[3])));
    }
    let symmetric = match fields[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => {
            return Err(bad(
                1,
                format!("unsupported storage qualifier '{other}' (use general or symmetric)"),
            ))
        }
    };

    let mut toks = Tokens::new(reader);
    toks.line = 1;
    let nrows = toks.next_usize()?;
    let ncols = toks.next_usize()?;
    if symmetric && nrows != ncols {
        return Err(bad(toks.line, "symmetric matrix must be square"));
    }
    let mut m = DMatrix::zeros(nrows, ncols);
    if symmetric {
        for j in 0..ncols {
            for i in j..nrows {
                let v = toks.next_f64()?;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
    } else {
        for j in 0..ncols {
            for i in 0..nrows {
                m[(i, j)] = toks.next_f64()?;
            }
        }
    }
    for v in m.iter() {
        if !v.is_finite() {
            return Err(bad(toks.line, "non-finite entry"));
        }
    }
    Ok(m)
}

pub fn read_vector<R: BufRead>(input: R) -> Result<DVector<f64>> {
    let m = read_matrix(input)?;
    if m.ncols() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "expected a single-column vector, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(DVector::from_column_slice(m.as_slice()))
}

pub fn read_matrix_path(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix(BufReader::new(File::open(path)?))
}

pub fn write_matrix_path(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix(&mut w, m)?;
    Ok(w.flush()?)
}

pub fn write_symmetric_path(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_symmetric(&mut w, m)?;
    Ok(w.flush()?)
}
