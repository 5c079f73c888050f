use std::path::Path;

use ndarray::Array2;

use super::config::TaskKind;
use super::CliError;
use crate::data::{LabeledDataset, Labels};

/// Cells treated as missing rather than malformed.
const MISSING: [&str; 4] = ["", "?", "NA", "NaN"];

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub data: LabeledDataset,
    pub feature_names: Vec<String>,
    /// Original label strings by class index; `None` for regression.
    pub label_map: Option<Vec<String>>,
    /// Rows dropped because a cell was missing.
    pub dropped_rows: usize,
}

fn is_missing(cell: &str) -> bool {
    MISSING.contains(&cell.trim())
}

/// Class names in a stable order: numerically when every name parses as a
/// number, lexicographically otherwise.
fn label_order(mut names: Vec<String>) -> Vec<String> {
    names.sort();
    names.dedup();
    if names.iter().all(|n| n.parse::<f64>().is_ok()) {
        names.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    names
}

/// Reads a headed, comma-separated file. Rows with a missing cell are
/// dropped and counted; any other unparseable numeric cell is an error that
/// names its row (1-based, header excluded) and column.
pub fn ingest_csv(path: &Path, label_column: &str, kind: TaskKind) -> Result<Ingested, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| CliError::Data(format!("label column '{label_column}' not found")))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    let mut dropped_rows = 0;
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| CliError::Data(format!("row {row}: {e}")))?;
        if record.len() != headers.len() {
            return Err(CliError::Data(format!(
                "row {row}: expected {} fields, found {}",
                headers.len(),
                record.len()
            )));
        }
        if record.iter().any(is_missing) {
            dropped_rows += 1;
            continue;
        }
        for (c, cell) in record.iter().enumerate() {
            if c == label_idx {
                continue;
            }
            let value: f64 = cell.parse().map_err(|_| {
                CliError::Data(format!(
                    "row {row}, column '{}': cannot parse '{cell}' as a number",
                    headers[c]
                ))
            })?;
            if !value.is_finite() {
                return Err(CliError::Data(format!(
                    "row {row}, column '{}': non-finite value",
                    headers[c]
                )));
            }
            features.push(value);
        }
        raw_labels.push((row, record[label_idx].to_string()));
    }
    let m = raw_labels.len();
    if m == 0 {
        return Err(CliError::Data(format!("{}: no complete rows", path.display())));
    }
    let x = Array2::from_shape_vec((m, feature_names.len()), features).expect("row-major feature buffer");

    let (labels, label_map) = match kind {
        TaskKind::Classification => {
            let names = label_order(raw_labels.iter().map(|(_, l)| l.clone()).collect());
            let indices = raw_labels
                .iter()
                .map(|(_, l)| names.iter().position(|n| n == l).expect("label in map"))
                .collect();
            (
                Labels::Classes {
                    indices,
                    classes: names.len(),
                },
                Some(names),
            )
        }
        TaskKind::Regression => {
            let targets = raw_labels
                .iter()
                .map(|(row, l)| {
                    l.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                        CliError::Data(format!(
                            "row {row}, column '{label_column}': cannot parse '{l}' as a number"
                        ))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            (Labels::Targets(targets), None)
        }
    };
    let data = LabeledDataset::new(x, labels)?;
    Ok(Ingested {
        data,
        feature_names,
        label_map,
        dropped_rows,
    })
}
