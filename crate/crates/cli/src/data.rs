//! CSV ingestion and emission.
//!
//! Data files have a header and columns `t, x0 .. x{D-1}, y`. Floats are
//! written with 17 significant digits so a re-read is bit-exact.

use std::path::Path;

use adaptive_sgp::stream::StreamRecord;
use nalgebra::{DMatrix, DVector};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub t: DVector<f64>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn read_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn parse_field(path: &Path, row: usize, col: &str, s: &str) -> Result<f64, CliError> {
    let v: f64 = s.trim().parse().map_err(|_| read_err(path, format!("row {row}, column {col}: '{s}' is not a number")))?;
    if !v.is_finite() {
        return Err(read_err(path, format!("row {row}, column {col}: non-finite value")));
    }
    Ok(v)
}

/// Reads a data CSV. Without `x` columns the time column is the input.
pub fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let mut rdr = csv::ReaderBuilder::new().from_path(path).map_err(|e| read_err(path, e))?;
    let header: Vec<String> = rdr.headers().map_err(|e| read_err(path, e))?.iter().map(|h| h.trim().to_string()).collect();
    let d = header.len().saturating_sub(2);
    let expected: Vec<String> =
        std::iter::once("t".to_string()).chain((0..d).map(|i| format!("x{i}"))).chain(std::iter::once("y".into())).collect();
    if header.len() < 2 || header != expected {
        return Err(read_err(path, format!("header must be t,x0..x{{D-1}},y; got {}", header.join(","))));
    }
    let (mut t, mut xs, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| read_err(path, e))?;
        let row = i + 2;
        t.push(parse_field(path, row, "t", &rec[0])?);
        for j in 0..d {
            xs.push(parse_field(path, row, &header[j + 1], &rec[j + 1])?);
        }
        y.push(parse_field(path, row, "y", &rec[d + 1])?);
    }
    if t.is_empty() {
        return Err(read_err(path, "no data rows"));
    }
    let n = t.len();
    let t = DVector::from_vec(t);
    let x = if d == 0 { DMatrix::from_column_slice(n, 1, t.as_slice()) } else { DMatrix::from_row_slice(n, d, &xs) };
    Ok(Dataset { t, x, y: DVector::from_vec(y) })
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("cannot write {}: {e}", path.display()))
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let d = data.x.ncols();
    let header: Vec<String> =
        std::iter::once("t".to_string()).chain((0..d).map(|i| format!("x{i}"))).chain(std::iter::once("y".into())).collect();
    w.write_record(&header).map_err(|e| write_err(path, e))?;
    for i in 0..data.t.len() {
        let row: Vec<String> = std::iter::once(fmt_f64(data.t[i]))
            .chain(data.x.row(i).iter().map(|&v| fmt_f64(v)))
            .chain(std::iter::once(fmt_f64(data.y[i])))
            .collect();
        w.write_record(&row).map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| write_err(path, e))
}

/// Records of several seeds, one row per prediction, fields in declaration
/// order after a leading `seed` column.
pub fn write_records(path: &Path, runs: &[(u64, Vec<StreamRecord>)]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let d = runs.iter().flat_map(|(_, r)| r.first()).map(|r| r.x.len()).next().unwrap_or(1);
    let mut header = vec!["seed".to_string(), "step".into()];
    header.extend((0..d).map(|i| format!("x{i}")));
    header.extend(["y_true", "pred_mean", "pred_var", "noise_var", "k_inducing", "elapsed_us"].map(String::from));
    w.write_record(&header).map_err(|e| write_err(path, e))?;
    for (seed, records) in runs {
        for r in records {
            let mut row = vec![seed.to_string(), r.step.to_string()];
            row.extend(r.x.iter().map(|&v| fmt_f64(v)));
            row.extend([fmt_f64(r.y_true), fmt_f64(r.pred_mean), fmt_f64(r.pred_var), fmt_f64(r.noise_var)]);
            row.extend([r.k_inducing.to_string(), r.elapsed_us.to_string()]);
            w.write_record(&row).map_err(|e| write_err(path, e))?;
        }
    }
    w.flush().map_err(|e| write_err(path, e))
}

/// A univariate series: the `y` column if there is one, else the last column.
pub fn read_series(path: &Path) -> Result<Vec<f64>, CliError> {
    let mut rdr = csv::ReaderBuilder::new().from_path(path).map_err(|e| read_err(path, e))?;
    let header: Vec<String> = rdr.headers().map_err(|e| read_err(path, e))?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() {
        return Err(read_err(path, "empty header"));
    }
    let col = header.iter().position(|h| h == "y").unwrap_or(header.len() - 1);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| read_err(path, e))?;
        let field = rec.get(col).ok_or_else(|| read_err(path, format!("row {} is missing column {}", i + 2, header[col])))?;
        out.push(parse_field(path, i + 2, &header[col], field)?);
    }
    Ok(out)
}
