//! MatrixMarket coordinate I/O for debugging and test fixtures.
//!
//! Only the `matrix coordinate real general` flavor is supported; indices are
//! 1-based on disk as the format requires.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

const HEADER: &str = "%%MatrixMarket matrix coordinate real general";

pub fn write_matrix_market<W: Write>(w: &mut W, a: &SparseMatrix) -> Result<()> {
    writeln!(w, "{HEADER}")?;
    writeln!(w, "{} {} {}", a.n_rows(), a.n_cols(), a.nnz())?;
    for i in 0..a.n_rows() {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            // shortest round-trip decimal keeps values exact across a cycle
            writeln!(w, "{} {} {v}", i + 1, j + 1)?;
        }
    }
    Ok(())
}

pub fn read_matrix_market<R: BufRead>(r: &mut R) -> Result<SparseMatrix> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err("empty file"))??;
    if header.trim() != HEADER {
        return Err(parse_err(&format!("unsupported header: {header}")));
    }
    let mut size_line = None;
    for line in lines.by_ref() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        size_line = Some(line);
        break;
    }
    let size_line = size_line.ok_or_else(|| parse_err("missing size line"))?;
    let mut it = size_line.split_whitespace();
    let n_rows: usize = next_field(&mut it, "n_rows")?;
    let n_cols: usize = next_field(&mut it, "n_cols")?;
    let nnz: usize = next_field(&mut it, "nnz")?;

    let mut triplets = Vec::with_capacity(nnz);
    for line in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let mut it = t.split_whitespace();
        let i: usize = next_field(&mut it, "row index")?;
        let j: usize = next_field(&mut it, "col index")?;
        let v: f64 = next_field(&mut it, "value")?;
        if i == 0 || j == 0 || i > n_rows || j > n_cols {
            return Err(parse_err(&format!("entry ({i},{j}) out of bounds")));
        }
        triplets.push((i - 1, j - 1, v));
    }
    if triplets.len() != nnz {
        return Err(parse_err(&format!(
            "expected {nnz} entries, found {}",
            triplets.len()
        )));
    }
    Ok(SparseMatrix::from_triplets(n_rows, n_cols, &triplets))
}

pub fn write_matrix_market_file<P: AsRef<Path>>(path: P, a: &SparseMatrix) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_matrix_market(&mut w, a)
}

pub fn read_matrix_market_file<P: AsRef<Path>>(path: P) -> Result<SparseMatrix> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_matrix_market(&mut r)
}

fn next_field<'a, T: std::str::FromStr>(
    it: &mut impl Iterator<Item = &'a str>,
    what: &'static str,
) -> Result<T> {
    it.next()
        .ok_or_else(|| parse_err(&format!("missing {what}")))?
        .parse()
        .map_err(|_| parse_err(&format!("bad {what}")))
}

fn parse_err(detail: &str) -> Error {
    Error::Parse {
        what: "MatrixMarket",
        detail: detail.to_string(),
    }
}
