//! Plain-text matrix dumps shared by the CSV exports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Formats a float with 17 significant digits, enough to round-trip every
/// IEEE-754 double bit-exactly.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{:.16e}", x)
    }
}

pub fn parse_f64(field: &str) -> Result<f64> {
    let f = field.trim();
    match f {
        "NaN" | "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => f
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("bad number {f:?}: {e}"))),
    }
}

/// Writes a matrix as headerless CSV, one matrix row per line.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix_rows(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn write_matrix_rows<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads a headerless numeric CSV into a matrix.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    parse_matrix_rows(&rows)
}

pub(crate) fn parse_matrix_rows(rows: &[&str]) -> Result<DMatrix<f64>> {
    let mut data = Vec::new();
    let mut ncols = None;
    for line in rows {
        let vals = line.split(',').map(parse_f64).collect::<Result<Vec<_>>>()?;
        match ncols {
            None => ncols = Some(vals.len()),
            Some(c) if c != vals.len() => {
                return Err(Error::Parse(format!("ragged matrix row: {} vs {c}", vals.len())))
            }
            _ => {}
        }
        data.extend(vals);
    }
    let ncols = ncols.unwrap_or(0);
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &data))
}

/// Converts a matrix into nested row-major vectors for JSON export.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Inverse of [`to_rows`]; `ncols` disambiguates empty matrices.
pub fn from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse(format!(
            "expected a {nrows}x{ncols} matrix, got {} rows",
            rows.len()
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting_round_trips_bits() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let back = parse_f64(&fmt_f64(x)).unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
