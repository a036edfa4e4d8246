//! CSV (row-major, header-free) and JSON (`{"shape":[n,m],"data":[...]}`) serialization.
//!
//! Values are written in shortest round-trip decimal form, so reading back
//! what was written reproduces every bit.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Histogram;

#[derive(Debug, Serialize, Deserialize)]
struct MatrixDoc {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn fmt_cell(x: f64) -> Result<String> {
    if !x.is_finite() {
        return Err(Error::Parse(format!("cannot serialize non-finite value {x}")));
    }
    Ok(serde_json::to_string(&x)?)
}

fn parse_cell(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("bad number {s:?}: {e}")))
}

pub fn write_matrix_csv<W: Write>(m: &Array2<f64>, w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for row in m.rows() {
        let cells = row.iter().map(|&x| fmt_cell(x)).collect::<Result<Vec<_>>>()?;
        wr.write_record(&cells)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(r: R) -> Result<Array2<f64>> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in rd.records() {
        let rec = rec?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        match cols {
            None => cols = Some(rec.len()),
            Some(c) if c != rec.len() => {
                return Err(Error::Parse(format!(
                    "row {rows} has {} fields, expected {c}",
                    rec.len()
                )))
            }
            _ => {}
        }
        for cell in rec.iter() {
            data.push(parse_cell(cell)?);
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Parse(e.to_string()))
}

/// One value per line.
pub fn write_vector_csv<W: Write>(v: &Array1<f64>, mut w: W) -> Result<()> {
    for &x in v {
        writeln!(w, "{}", fmt_cell(x)?)?;
    }
    Ok(())
}

pub fn read_vector_csv<R: Read>(r: R) -> Result<Array1<f64>> {
    let m = read_matrix_csv(r)?;
    if m.ncols() > 1 && m.nrows() > 1 {
        return Err(Error::Parse(format!("expected a vector, got {:?}", m.dim())));
    }
    Ok(Array1::from_iter(m.iter().copied()))
}

pub fn matrix_to_json(m: &Array2<f64>) -> Result<String> {
    if let Some(x) = m.iter().find(|x| !x.is_finite()) {
        return Err(Error::Parse(format!("cannot serialize non-finite value {x}")));
    }
    let doc = MatrixDoc {
        shape: vec![m.nrows(), m.ncols()],
        data: m.iter().copied().collect(),
    };
    Ok(serde_json::to_string(&doc)?)
}

pub fn matrix_from_json(s: &str) -> Result<Array2<f64>> {
    let doc: MatrixDoc = serde_json::from_str(s)?;
    let (n, m) = match doc.shape.as_slice() {
        [n, m] => (*n, *m),
        [n] => (*n, 1),
        other => return Err(Error::Parse(format!("unsupported shape {other:?}"))),
    };
    Array2::from_shape_vec((n, m), doc.data).map_err(|e| Error::Parse(e.to_string()))
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "json") {
        matrix_from_json(&std::fs::read_to_string(path)?)
    } else {
        read_matrix_csv(File::open(path)?)
    }
}

pub fn save_matrix(m: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "json") {
        std::fs::write(path, matrix_to_json(m)?)?;
        Ok(())
    } else {
        write_matrix_csv(m, File::create(path)?)
    }
}

pub fn load_histogram(path: impl AsRef<Path>) -> Result<Histogram> {
    let path = path.as_ref();
    let v = if path.extension().is_some_and(|e| e == "json") {
        Array1::from_iter(matrix_from_json(&std::fs::read_to_string(path)?)?.iter().copied())
    } else {
        read_vector_csv(File::open(path)?)?
    };
    Histogram::new(v)
}

pub fn save_vector(v: &Array1<f64>, path: impl AsRef<Path>) -> Result<()> {
    write_vector_csv(v, File::create(path)?)
}
