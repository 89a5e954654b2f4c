//! Headerless, row-major CSV for vectors and matrices.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use nalgebra::{DMatrix, DVector};

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn parse_cell(cell: &str, row: usize, col: usize) -> Result<f64> {
    cell.parse().with_context(|| format!("row {}, column {}: {cell:?} is not a number", row + 1, col + 1))
}

/// Rows of optional cells; an empty cell is `None`.
pub fn parse_rows(text: &str) -> Result<Vec<Vec<Option<f64>>>> {
    let mut rows = Vec::new();
    for (r, record) in reader(text).records().enumerate() {
        let record = record?;
        if record.iter().all(str::is_empty) && record.len() <= 1 {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| if cell.is_empty() { Ok(None) } else { parse_cell(cell, r, c).map(Some) })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn dense_rows(text: &str) -> Result<Vec<Vec<f64>>> {
    parse_rows(text)?
        .into_iter()
        .enumerate()
        .map(|(r, row)| {
            row.into_iter()
                .enumerate()
                .map(|(c, v)| v.with_context(|| format!("row {}, column {} is empty", r + 1, c + 1)))
                .collect()
        })
        .collect()
}

/// Reads `arg` as a file if it names one, otherwise as inline CSV text.
pub fn read_source(arg: &str) -> Result<String> {
    let path = Path::new(arg);
    if path.is_file() {
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
    } else {
        Ok(arg.to_string())
    }
}

/// A vector given as a single row or a single column.
pub fn read_vector(arg: &str) -> Result<Vec<f64>> {
    let rows = dense_rows(&read_source(arg)?)?;
    let values: Vec<f64> = match rows.as_slice() {
        [] => bail!("empty vector input"),
        [row] => row.clone(),
        _ if rows.iter().all(|r| r.len() == 1) => rows.iter().map(|r| r[0]).collect(),
        _ => bail!("vector input must be a single row or a single column"),
    };
    Ok(values)
}

pub fn read_matrix(arg: &str) -> Result<DMatrix<f64>> {
    let rows = dense_rows(&read_source(arg)?)?;
    ensure!(!rows.is_empty(), "empty matrix input");
    let cols = rows[0].len();
    ensure!(rows.iter().all(|r| r.len() == cols), "matrix rows have different lengths");
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn read_square(arg: &str) -> Result<DMatrix<f64>> {
    let m = read_matrix(arg)?;
    ensure!(m.is_square(), "expected a square matrix, got {}×{}", m.nrows(), m.ncols());
    Ok(m)
}

/// Complete sample vectors, one per row.
pub fn read_samples(arg: &str) -> Result<Vec<DVector<f64>>> {
    let m = read_matrix(arg)?;
    Ok(m.row_iter().map(|r| r.transpose()).collect())
}

pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Writes `text` to `path`, or to stdout when no path is given.
pub fn emit(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}
