//! Small helpers shared by the CSV readers.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub(crate) struct Header {
    columns: HashMap<String, usize>,
}

impl Header {
    pub(crate) fn new(record: &csv::StringRecord) -> Self {
        let columns = record
            .iter()
            .enumerate()
            .map(|(i, name)| (name.trim().to_string(), i))
            .collect();
        Self { columns }
    }

    pub(crate) fn require(&self, name: &str) -> Result<usize> {
        self.columns
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })
    }

    pub(crate) fn optional(&self, name: &str) -> Option<usize> {
        self.columns.get(name).copied()
    }
}

pub(crate) fn field(record: &csv::StringRecord, idx: usize) -> &str {
    record.get(idx).unwrap_or("").trim()
}

pub(crate) fn parse<T: FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    row: usize,
    column: &str,
) -> Result<T> {
    let raw = field(record, idx);
    raw.parse().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

/// Parses a finite, nonnegative real.
pub(crate) fn parse_nonneg(
    record: &csv::StringRecord,
    idx: usize,
    row: usize,
    column: &str,
) -> Result<f64> {
    let v: f64 = parse(record, idx, row, column)?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            column: column.to_string(),
            value: field(record, idx).to_string(),
        });
    }
    if v < 0.0 {
        return Err(Error::Validation {
            row,
            message: format!("negative value {v} in column \"{column}\""),
        });
    }
    Ok(v)
}

pub(crate) fn reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file)))
}

pub(crate) fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
