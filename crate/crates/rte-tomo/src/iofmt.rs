//! On-disk formats for flat float arrays, nodal fields and run histories.
//!
//! Two interchangeable storages exist for every array artifact:
//!
//! - **binary**: one JSON header line terminated by `\n`, followed by the
//!   raw little-endian IEEE-754 doubles;
//! - **csv**: `#`-prefixed JSON header lines, a column-name row, then one
//!   value per row, printed with Rust's shortest round-trip formatting.
//!
//! Both round-trip bit-exactly.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};

/// Array storage flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Storage {
    Binary,
    Csv,
}

impl Storage {
    pub fn extension(self) -> &'static str {
        match self {
            Storage::Binary => "bin",
            Storage::Csv => "csv",
        }
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Write a flat array with a JSON header as raw little-endian doubles.
pub fn write_flat_binary(path: &Path, header: &Value, values: &[f64]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    let mut text = serde_json::to_string(header).expect("header serializes");
    text.push('\n');
    file.write_all(text.as_bytes())?;
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&bytes)?;
    Ok(())
}

/// Read a flat binary array and its JSON header.
pub fn read_flat_binary(path: &Path) -> Result<(Value, Vec<f64>)> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: Value = serde_json::from_str(line.trim_end())
        .map_err(|e| format_err(path, format!("bad JSON header: {e}")))?;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(format_err(path, "payload is not a multiple of 8 bytes"));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

/// Write a flat array as CSV with the JSON header in `#` comment lines.
pub fn write_flat_csv(path: &Path, header: &Value, column: &str, values: &[f64]) -> Result<()> {
    let mut out = String::new();
    out.push_str("# ");
    out.push_str(&serde_json::to_string(header).expect("header serializes"));
    out.push('\n');
    out.push_str(column);
    out.push('\n');
    for v in values {
        out.push_str(&format_f64(*v));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a flat CSV array and its JSON header.
pub fn read_flat_csv(path: &Path) -> Result<(Value, Vec<f64>)> {
    let text = fs::read_to_string(path)?;
    let mut header = Value::Null;
    let mut values = Vec::new();
    let mut saw_column = false;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            if header.is_null() {
                header = serde_json::from_str(rest.trim())
                    .map_err(|e| format_err(path, format!("bad JSON header: {e}")))?;
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if !saw_column {
            saw_column = true;
            continue;
        }
        let v: f64 = line
            .trim()
            .parse()
            .map_err(|e| format_err(path, format!("bad float {line:?}: {e}")))?;
        values.push(v);
    }
    if header.is_null() {
        return Err(format_err(path, "missing # header line"));
    }
    Ok((header, values))
}

/// Write in the requested storage.
pub fn write_flat(
    storage: Storage,
    path: &Path,
    header: &Value,
    column: &str,
    values: &[f64],
) -> Result<()> {
    match storage {
        Storage::Binary => write_flat_binary(path, header, values),
        Storage::Csv => write_flat_csv(path, header, column, values),
    }
}

/// Read either storage, dispatching on the file extension.
pub fn read_flat(path: &Path) -> Result<(Value, Vec<f64>)> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => read_flat_binary(path),
        Some("csv") => read_flat_csv(path),
        other => Err(format_err(path, format!("unknown extension {other:?}"))),
    }
}

/// Shortest representation that parses back to the same bits.
pub fn format_f64(v: f64) -> String {
    let s = format!("{v}");
    debug_assert_eq!(s.parse::<f64>().ok(), Some(v));
    s
}

/// Incremental CSV writer with a fixed header row.
pub struct CsvWriter {
    rows: String,
}

impl CsvWriter {
    pub fn new(columns: &[&str]) -> Self {
        let mut rows = columns.join(",");
        rows.push('\n');
        Self { rows }
    }

    pub fn push_row(&mut self, cells: &[String]) {
        self.rows.push_str(&cells.join(","));
        self.rows.push('\n');
    }

    pub fn contents(&self) -> &str {
        &self.rows
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.rows)?;
        Ok(())
    }
}
