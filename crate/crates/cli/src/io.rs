//! Field files: CSV with a one-line header, or raw little-endian complex
//! doubles with a JSON sidecar. Every file is written to a temporary name
//! and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::Format;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub rows: usize,
    pub cols: usize,
    pub kind: String,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldData {
    pub meta: FieldMeta,
    /// Row-major values.
    pub values: Vec<Complex64>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.flush().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `dir/stem.<ext>` (plus `dir/stem.json` for f64bin) and returns the
/// data file path.
pub fn write_field(dir: &Path, stem: &str, format: Format, field: &FieldData) -> Result<PathBuf, CliError> {
    let path = dir.join(format!("{stem}.{}", format.extension()));
    let m = &field.meta;
    assert_eq!(field.values.len(), m.rows * m.cols);
    match format {
        Format::Csv => {
            let mut s = format!("# rows={} cols={} kind={} alpha={}\n", m.rows, m.cols, m.kind, m.alpha);
            for row in field.values.chunks(m.cols) {
                let cells: Vec<String> = row.iter().map(|z| format!("{:.16e},{:.16e}", z.re, z.im)).collect();
                s.push_str(&cells.join(","));
                s.push('\n');
            }
            write_atomic(&path, s.as_bytes())?;
        }
        Format::F64bin => {
            let mut bytes = Vec::with_capacity(16 * field.values.len());
            for z in &field.values {
                bytes.extend_from_slice(&z.re.to_le_bytes());
                bytes.extend_from_slice(&z.im.to_le_bytes());
            }
            write_atomic(&path, &bytes)?;
            write_json(&sidecar(&path), m)?;
        }
    }
    Ok(path)
}

fn parse_header(line: &str) -> Option<FieldMeta> {
    let body = line.strip_prefix('#')?.trim();
    let (mut rows, mut cols, mut kind, mut alpha) = (None, None, None, None);
    for tok in body.split_whitespace() {
        let (k, v) = tok.split_once('=')?;
        match k {
            "rows" => rows = v.parse().ok(),
            "cols" => cols = v.parse().ok(),
            "kind" => kind = Some(v.to_string()),
            "alpha" => alpha = v.parse().ok(),
            _ => return None,
        }
    }
    Some(FieldMeta {
        rows: rows?,
        cols: cols?,
        kind: kind?,
        alpha: alpha?,
        seed: None,
    })
}

/// Reads a field, choosing the format from the file extension.
pub fn read_field(path: &Path) -> Result<FieldData, CliError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv(path),
        Some("f64bin") => read_bin(path),
        _ => Err(io_err(path, "unsupported extension (expected .csv or .f64bin)")),
    }
}

fn read_csv(path: &Path) -> Result<FieldData, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let meta = lines
        .next()
        .and_then(parse_header)
        .ok_or_else(|| io_err(path, "missing or malformed header"))?;
    let mut values = Vec::with_capacity(meta.rows * meta.cols);
    let mut nrows = 0;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let nums: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| io_err(path, format!("row {}: {e}", nrows + 1)))?;
        if nums.len() != 2 * meta.cols {
            return Err(io_err(path, format!("row {} has {} numbers, expected {}", nrows + 1, nums.len(), 2 * meta.cols)));
        }
        values.extend(nums.chunks(2).map(|p| Complex64::new(p[0], p[1])));
        nrows += 1;
    }
    if nrows != meta.rows {
        return Err(io_err(path, format!("found {nrows} rows, header says {}", meta.rows)));
    }
    Ok(FieldData { meta, values })
}

fn read_bin(path: &Path) -> Result<FieldData, CliError> {
    let side = sidecar(path);
    let text = fs::read_to_string(&side).map_err(|e| io_err(&side, e))?;
    let meta: FieldMeta = serde_json::from_str(&text).map_err(|e| io_err(&side, e))?;
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() != 16 * meta.rows * meta.cols {
        return Err(io_err(path, format!("{} bytes do not match shape {}x{}", bytes.len(), meta.rows, meta.cols)));
    }
    let f = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
    let values = bytes.chunks_exact(16).map(|c| Complex64::new(f(&c[..8]), f(&c[8..]))).collect();
    Ok(FieldData { meta, values })
}
