//! File formats shared by the library and the command-line tool.
//!
//! CSV numbers are written with 17 significant digits so that every `f64`
//! round-trips exactly. JSON uses serde_json's shortest round-trip form.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::model::{SamplePath, SamplingScheme};
use crate::{Error, Result};

/// Format a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write a path as CSV with header `t,x1,...,xd`.
pub fn write_path_csv<W: Write>(path: &SamplePath, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=path.dim()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    let scheme = path.scheme();
    for i in 0..=path.n() {
        let mut row = vec![fmt_f64(scheme.time(i))];
        row.extend(path.values().row(i).iter().map(|&v| fmt_f64(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_path_csv(path: &SamplePath, file: &Path) -> Result<()> {
    write_path_csv(path, BufWriter::new(File::create(file)?))
}

/// Read a path CSV. The first column is time; it must be equispaced.
pub fn read_path_csv<R: Read>(input: R) -> Result<SamplePath> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.len() < 2 || headers.get(0).map(str::trim) != Some("t") {
        return Err(Error::config("path CSV must start with a `t` column followed by state columns"));
    }
    let d = headers.len() - 1;
    let mut times = Vec::new();
    let mut data = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        if record.len() != d + 1 {
            return Err(Error::config(format!("row {} has {} fields, expected {}", line + 1, record.len(), d + 1)));
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("row {}, column {}: `{field}` is not a number", line + 1, j + 1)))?;
            if j == 0 {
                times.push(v);
            } else {
                data.push(v);
            }
        }
    }
    if times.len() < 2 {
        return Err(Error::config("path CSV needs at least two observations"));
    }
    let n = times.len() - 1;
    let delta = (times[n] - times[0]) / n as f64;
    for i in 1..=n {
        let step = times[i] - times[i - 1];
        if (step - delta).abs() > 1e-8 * delta.abs().max(1.0) {
            return Err(Error::config(format!("observation times are not equispaced at row {}", i + 1)));
        }
    }
    let scheme = SamplingScheme::new(n, delta)?;
    SamplePath::new(scheme, DMatrix::from_row_slice(n + 1, d, &data))
}

pub fn load_path_csv(file: &Path) -> Result<SamplePath> {
    read_path_csv(File::open(file)?)
}

/// Deserialize JSON, naming the offending field on failure.
pub fn from_json_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(format!("at `{path}`: {}", e.into_inner()))
    })
}

pub fn load_json<T: DeserializeOwned>(file: &Path) -> Result<T> {
    let text = std::fs::read_to_string(file)?;
    from_json_str(&text)
}

pub fn save_json<T: Serialize>(value: &T, file: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(file)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
