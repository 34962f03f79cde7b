//! Sparse text export: `<label> <index>:<value> ...`, 1-based ascending
//! indices, zero values omitted, LF line endings.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::netspec::format_real;

use super::{io_err, DataError};

pub fn format_libsvm_line(label: i64, features: &[f64]) -> String {
    let mut line = label.to_string();
    for (i, &v) in features.iter().enumerate() {
        if v != 0.0 {
            write!(line, " {}:{}", i + 1, format_real(v)).expect("write to String");
        }
    }
    line
}

/// One line per row. Every row must have the same dimension.
pub fn write_libsvm(rows: &[(i64, Vec<f64>)]) -> Result<String, DataError> {
    let mut out = String::new();
    let dim = rows.first().map(|r| r.1.len());
    for (i, (label, features)) in rows.iter().enumerate() {
        if Some(features.len()) != dim {
            return Err(DataError::Row {
                row: i + 1,
                message: format!("dimension {} differs from {}", features.len(), dim.unwrap_or(0)),
            });
        }
        out.push_str(&format_libsvm_line(*label, features));
        out.push('\n');
    }
    Ok(out)
}

pub fn export_libsvm(rows: &[(i64, Vec<f64>)], path: &Path) -> Result<(), DataError> {
    fs::write(path, write_libsvm(rows)?).map_err(io_err(path))
}

/// Parses one line into its label and (1-based index, value) pairs.
pub fn parse_libsvm_line(line: &str, row: usize) -> Result<(i64, Vec<(usize, f64)>), DataError> {
    let err = |message: String| DataError::Row { row, message };
    let mut fields = line.split_whitespace();
    let label_text = fields.next().ok_or_else(|| err("empty line".into()))?;
    let label = label_text
        .parse::<i64>()
        .ok()
        .or_else(|| label_text.parse::<f64>().ok().filter(|v| v.fract() == 0.0 && v.abs() < 9e15).map(|v| v as i64))
        .ok_or_else(|| err(format!("label '{label_text}' is not an integer")))?;
    let mut pairs = Vec::new();
    let mut last = 0;
    for field in fields {
        let (idx, val) = field.split_once(':').ok_or_else(|| err(format!("expected index:value, got '{field}'")))?;
        let idx: usize = idx.parse().map_err(|_| err(format!("bad index '{idx}'")))?;
        if idx <= last {
            return Err(err(format!("index {idx} is not above the previous index {last}")));
        }
        let val: f64 = val.parse().map_err(|_| err(format!("bad value '{val}'")))?;
        pairs.push((idx, val));
        last = idx;
    }
    Ok((label, pairs))
}

/// Parses libsvm text into dense rows. With `dim` of `None` the dimension
/// is the largest index seen.
pub fn read_libsvm(text: &str, dim: Option<usize>) -> Result<Vec<(i64, Vec<f64>)>, DataError> {
    let mut parsed = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        parsed.push((i + 1, parse_libsvm_line(line, i + 1)?));
    }
    let max_index = parsed.iter().filter_map(|(_, (_, p))| p.last().map(|x| x.0)).max().unwrap_or(0);
    let dim = match dim {
        Some(d) if d < max_index => {
            return Err(DataError::Invalid(format!("feature index {max_index} exceeds dimension {d}")))
        }
        Some(d) => d,
        None => max_index,
    };
    Ok(parsed
        .into_iter()
        .map(|(_, (label, pairs))| {
            let mut dense = vec![0.0; dim];
            for (idx, v) in pairs {
                dense[idx - 1] = v;
            }
            (label, dense)
        })
        .collect())
}
