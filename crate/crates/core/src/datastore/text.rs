//! CSV dialect: a header row `c,h,w`, then one row per sample holding the
//! label string followed by c·h·w feature values. Values are kept as
//! written (no rescaling).

use std::fs;
use std::path::Path;

use crate::netspec::format_real;
use crate::tensor::Tensor;

use super::dataset::{file_checksum, sorted_class_names, Dataset, Provenance, Sample};
use super::{io_err, DataError};

pub fn import_text(path: &Path) -> Result<Dataset, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|e| DataError::Unreadable { path: path.display().to_string(), reason: e.to_string() })?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let checksum = file_checksum(vec![(name, bytes)]);
    parse_text_inner(&text, path.display().to_string(), None, Some(checksum))
}

/// Parses CSV text held in memory.
pub fn parse_text(text: &str, origin: &str) -> Result<Dataset, DataError> {
    parse_text_inner(text, origin.to_string(), None, None)
}

/// Parses CSV text against a fixed class table (labels must be members),
/// keeping the given provenance and checksum.
pub fn parse_text_with_classes(
    text: &str,
    provenance: Provenance,
    class_names: Vec<String>,
    checksum: Option<String>,
) -> Result<Dataset, DataError> {
    let ds = parse_text_inner(text, provenance.path.clone(), Some(class_names), checksum)?;
    Ok(ds.with_provenance(provenance))
}

fn parse_text_inner(
    text: &str,
    origin: String,
    class_names: Option<Vec<String>>,
    checksum: Option<String>,
) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| DataError::Row { row: 1, message: e.to_string() })?,
        None => return Err(DataError::Row { row: 1, message: "missing header 'c,h,w'".into() }),
    };
    let dims: Vec<usize> = header
        .iter()
        .map(|f| f.trim().parse::<usize>().ok().filter(|&d| d > 0))
        .collect::<Option<_>>()
        .filter(|d: &Vec<usize>| d.len() == 3)
        .ok_or_else(|| DataError::Row { row: 1, message: "header must be three positive integers c,h,w".into() })?;
    let (c, h, w) = (dims[0], dims[1], dims[2]);
    let features = c * h * w;

    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    for record in records {
        let record = record.map_err(|e| DataError::Row {
            row: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(rows.len() + 2);
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        let got = record.len() - 1;
        if got != features {
            return Err(DataError::Row { row, message: format!("expected {features} features, got {got}") });
        }
        let values = record
            .iter()
            .skip(1)
            .enumerate()
            .map(|(i, f)| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| DataError::Row { row, message: format!("feature {} is not a number: '{f}'", i + 1) })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((record[0].to_string(), values));
    }

    let class_names = class_names.unwrap_or_else(|| sorted_class_names(rows.iter().map(|(l, _)| l.as_str())));
    let samples = rows
        .into_iter()
        .enumerate()
        .map(|(i, (label, values))| {
            let idx = class_names
                .iter()
                .position(|n| *n == label)
                .ok_or_else(|| DataError::Row { row: i + 2, message: format!("unknown class '{label}'") })?;
            let image = Tensor::from_vec([1, c, h, w], values).expect("arity checked");
            Ok(Sample { image, label: idx })
        })
        .collect::<Result<Vec<_>, DataError>>()?;
    Dataset::new(samples, class_names, Provenance { path: origin, format: "text".into() }, checksum)
}

/// Renders `dataset` in the CSV dialect, values in shortest round-trip form.
pub fn write_csv(dataset: &Dataset) -> String {
    let [c, h, w] = dataset.sample_shape().unwrap_or([1, 1, 1]);
    let mut out = format!("{c},{h},{w}\n");
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for s in dataset.samples() {
        let mut record = vec![dataset.class_names()[s.label].clone()];
        record.extend(s.image.data().iter().map(|&v| format_real(v)));
        writer.write_record(&record).expect("in-memory write");
    }
    out.push_str(std::str::from_utf8(&writer.into_inner().expect("in-memory flush")).expect("utf-8"));
    out
}

pub fn export_csv(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    fs::write(path, write_csv(dataset)).map_err(io_err(path))
}
