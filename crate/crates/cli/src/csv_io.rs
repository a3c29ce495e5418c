//! CSV input and output.
//!
//! Input files have a header row and numeric cells. The target column, when
//! requested, is split off as the response; every other column is a feature.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use treediff::Dataset;

use crate::error::{CliError, Result};

/// A parsed numeric table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::data(path, format!("bad header: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(CliError::data(path, "empty header"));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // data rows are numbered from 1, after the header
        let record = record.map_err(|e| CliError::data(path, format!("row {}: {e}", i + 1)))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                let v: f64 = cell.parse().map_err(|_| {
                    CliError::data(
                        path,
                        format!(
                            "row {}, column {:?}: not a number: {cell:?}",
                            i + 1,
                            header[j]
                        ),
                    )
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(CliError::data(
                        path,
                        format!("row {}, column {:?}: non-finite value", i + 1, header[j]),
                    ))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::data(path, "no data rows"));
    }
    Ok(Table { header, rows })
}

/// Loads a training set, taking `target` as the response column.
pub fn load_dataset(path: &Path, target: &str) -> Result<Dataset> {
    let table = read_table(path)?;
    let t = table
        .header
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| CliError::data(path, format!("no column named {target:?}")))?;
    if table.header.len() < 2 {
        return Err(CliError::data(
            path,
            "need at least one feature column besides the target",
        ));
    }
    let names: Vec<String> = table
        .header
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != t)
        .map(|(_, h)| h.clone())
        .collect();
    let p = names.len();
    let mut features = Vec::with_capacity(table.rows.len() * p);
    let mut response = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        response.push(row[t]);
        features.extend(
            row.iter()
                .enumerate()
                .filter(|(j, _)| *j != t)
                .map(|(_, v)| *v),
        );
    }
    Dataset::new(features, p, response, names).map_err(|e| CliError::data(path, e.to_string()))
}

/// Reads points whose columns are `names` (in any order; other columns are
/// ignored). Returns the rows reordered to match `names`.
pub fn load_points(path: &Path, names: &[String]) -> Result<Vec<Vec<f64>>> {
    let table = read_table(path)?;
    let cols = names
        .iter()
        .map(|n| {
            table
                .header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| CliError::data(path, format!("missing column {n:?}")))
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(table
        .rows
        .iter()
        .map(|r| cols.iter().map(|&c| r[c]).collect())
        .collect())
}

/// Formats a float so that it parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let io = |e: csv::Error| CliError::data(path, e.to_string());
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row.iter().map(|v| fmt_f64(*v)))
            .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes pretty JSON followed by a newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Json {
        path: path.into(),
        source: e,
    })?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}
