use std::path::Path;

use super::{Dataset, Sample, Truth};
use crate::error::{Error, Result};

fn csv_err(path: &Path, row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

fn parse_label(path: &Path, row: usize, column: &str, cell: &str) -> Result<Truth> {
    match cell.trim().parse::<f64>() {
        Ok(0.0) => Ok(Truth::Normal),
        Ok(1.0) => Ok(Truth::Anomaly),
        _ => Err(csv_err(path, row, column, format!("label must be 0 or 1, found '{cell}'"))),
    }
}

fn read(path: &Path, label_column: Option<&str>, require_label: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::CsvFormat {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::CsvFormat {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::CsvFormat {
            path: path.to_path_buf(),
            message: "empty file (no header row)".into(),
        });
    }

    let label_idx = match label_column {
        Some(name) => {
            let idx = headers.iter().position(|h| h == name);
            if idx.is_none() && require_label {
                return Err(Error::CsvFormat {
                    path: path.to_path_buf(),
                    message: format!("label column '{name}' not found in header"),
                });
            }
            idx
        }
        None => None,
    };
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    if feature_names.is_empty() {
        return Err(Error::CsvFormat {
            path: path.to_path_buf(),
            message: "no feature columns".into(),
        });
    }

    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| {
            let message = match e.kind() {
                csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                    format!("ragged row: expected {expected_len} fields, found {len}")
                }
                _ => e.to_string(),
            };
            csv_err(path, row, "*", message)
        })?;
        let mut features = Vec::with_capacity(feature_names.len());
        let mut truth = None;
        for (col, cell) in record.iter().enumerate() {
            if Some(col) == label_idx {
                truth = Some(parse_label(path, row, &headers[col], cell)?);
                continue;
            }
            let v: f64 = cell.trim().parse().map_err(|_| {
                csv_err(path, row, &headers[col], format!("non-numeric value '{cell}'"))
            })?;
            if !v.is_finite() {
                return Err(csv_err(path, row, &headers[col], format!("non-finite value '{cell}'")));
            }
            features.push(v);
        }
        samples.push(Sample::unlabeled(i, features, truth));
    }
    if samples.is_empty() {
        return Err(Error::CsvFormat {
            path: path.to_path_buf(),
            message: "no data rows".into(),
        });
    }
    Ok(Dataset {
        feature_names,
        samples,
    })
}

/// Reads a headered, comma-separated file of numeric features.
///
/// When `label_column` is given it must exist; its 0/1 values become
/// `truth` (0 = normal, 1 = anomaly). Rows are numbered from 1, excluding
/// the header, and the row number becomes the sample id (minus one).
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Dataset> {
    read(path.as_ref(), label_column, true)
}

/// Like [`load_csv`], but a missing label column is not an error.
pub fn load_csv_for_scoring(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    read(path.as_ref(), Some(label_column), false)
}

/// Writes features (shortest round-trip float formatting) and, when every
/// sample carries one, the truth label.
pub fn write_csv(path: impl AsRef<Path>, dataset: &Dataset, label_column: &str) -> Result<()> {
    let path = path.as_ref();
    let with_label = dataset.samples.iter().all(|s| s.truth.is_some());
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::CsvFormat {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let to_err = |e: csv::Error| Error::CsvFormat {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut header = dataset.feature_names.clone();
    if with_label {
        header.push(label_column.to_string());
    }
    w.write_record(&header).map_err(to_err)?;
    for s in &dataset.samples {
        let mut rec: Vec<String> = s.features.iter().map(|v| v.to_string()).collect();
        if with_label {
            rec.push(if s.truth == Some(Truth::Anomaly) { "1" } else { "0" }.to_string());
        }
        w.write_record(&rec).map_err(to_err)?;
    }
    w.flush()?;
    Ok(())
}
