//! CSV ingestion and schema inference.

use std::collections::BTreeMap;
use std::path::Path;

use indexmap::IndexSet;

use super::{
    Dataset, FeatureKind, FeatureSpec, Record, Schema, TableError, Value, MISSING_TOKEN,
};

fn parse_finite(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a headered CSV into a typed [`Dataset`], inferring each column's
/// kind. A column is numerical iff it has at least one non-empty cell and
/// every non-empty cell parses as a finite number; `overrides` win over
/// inference. Empty cells become the [`MISSING_TOKEN`] category in
/// categorical columns and are an error in numerical ones.
pub fn ingest_csv(
    path: impl AsRef<Path>,
    label_column: &str,
    overrides: &BTreeMap<String, FeatureKind>,
) -> Result<Dataset, TableError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(TableError::FileNotFound(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(path)?;
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.to_string())
        .collect();

    let mut seen = IndexSet::new();
    for name in &header {
        if !seen.insert(name.clone()) {
            return Err(TableError::DuplicateColumn(name.clone()));
        }
    }
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| TableError::MissingLabelColumn(label_column.to_string()))?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    for row in reader.records() {
        let row = row?;
        rows.push(row.iter().map(|c| c.to_string()).collect());
    }
    if rows.is_empty() {
        return Err(TableError::EmptyDataset);
    }

    // Kind inference per column.
    let mut kinds = Vec::with_capacity(header.len());
    for (col, name) in header.iter().enumerate() {
        if col == label_idx {
            kinds.push(FeatureKind::Categorical);
            continue;
        }
        let kind = if let Some(k) = overrides.get(name) {
            *k
        } else {
            let mut non_empty = 0usize;
            let mut all_numeric = true;
            for row in &rows {
                let cell = row[col].trim();
                if cell.is_empty() {
                    continue;
                }
                non_empty += 1;
                if parse_finite(cell).is_none() {
                    all_numeric = false;
                    break;
                }
            }
            if non_empty > 0 && all_numeric {
                FeatureKind::Numerical
            } else {
                FeatureKind::Categorical
            }
        };
        kinds.push(kind);
    }

    // Build specs and values.
    let mut specs: Vec<FeatureSpec> = Vec::new();
    for (col, name) in header.iter().enumerate() {
        if col == label_idx {
            continue;
        }
        match kinds[col] {
            FeatureKind::Numerical => {
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                for (row_no, row) in rows.iter().enumerate() {
                    let cell = &row[col];
                    if cell.trim().is_empty() {
                        return Err(TableError::MissingNumeric {
                            column: name.clone(),
                            row: row_no,
                        });
                    }
                    let v = parse_finite(cell).ok_or_else(|| TableError::NotNumeric {
                        column: name.clone(),
                        row: row_no,
                        value: cell.clone(),
                    })?;
                    min = min.min(v);
                    max = max.max(v);
                }
                specs.push(FeatureSpec::numerical(name.clone(), min, max));
            }
            FeatureKind::Categorical => {
                let mut categories = IndexSet::new();
                for row in &rows {
                    let cell = row[col].trim();
                    if cell.is_empty() {
                        categories.insert(MISSING_TOKEN.to_string());
                    } else {
                        categories.insert(row[col].clone());
                    }
                }
                specs.push(FeatureSpec {
                    name: name.clone(),
                    kind: FeatureKind::Categorical,
                    range: None,
                    categories: Some(categories),
                });
            }
        }
    }

    let mut classes = IndexSet::new();
    for row in &rows {
        classes.insert(row[label_idx].clone());
    }
    if classes.len() < 2 {
        return Err(TableError::SingleClass(
            classes.first().cloned().unwrap_or_default(),
        ));
    }
    let label_spec = FeatureSpec {
        name: label_column.to_string(),
        kind: FeatureKind::Categorical,
        range: None,
        categories: Some(classes),
    };
    let schema = Schema::new(specs, label_spec);

    let mut records = Vec::with_capacity(rows.len());
    for row in &rows {
        let mut values = Vec::with_capacity(schema.features.len());
        let mut spec_iter = schema.features.iter();
        for (col, cell) in row.iter().enumerate() {
            if col == label_idx {
                continue;
            }
            let spec = spec_iter.next().expect("spec per non-label column");
            let value = match spec.kind {
                FeatureKind::Numerical => Value::Numeric {
                    text: cell.clone(),
                    value: parse_finite(cell).expect("validated above"),
                },
                FeatureKind::Categorical => {
                    if cell.trim().is_empty() {
                        Value::Categorical(MISSING_TOKEN.to_string())
                    } else {
                        Value::Categorical(cell.clone())
                    }
                }
            };
            values.push(value);
        }
        records.push(Record {
            values,
            label: row[label_idx].clone(),
        });
    }

    Dataset::new(schema, records)
}

/// Reads a CSV of rows already known to follow `schema` (e.g. a synthetic
/// table written by the sampler). No inference; values are validated
/// against the given schema instead.
pub fn ingest_csv_with_schema(
    path: impl AsRef<Path>,
    schema: &Schema,
) -> Result<Dataset, TableError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(TableError::FileNotFound(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let mut expected: Vec<&str> = schema.features.iter().map(|f| f.name.as_str()).collect();
    expected.push(&schema.label.name);
    if header != expected {
        return Err(TableError::BadSnapshot(format!(
            "csv header {:?} does not match schema columns",
            header
        )));
    }
    let mut records = Vec::new();
    for (row_no, row) in reader.records().enumerate() {
        let row = row?;
        let mut values = Vec::with_capacity(schema.features.len());
        for (spec, cell) in schema.features.iter().zip(row.iter()) {
            let value = match spec.kind {
                FeatureKind::Numerical => {
                    let v = parse_finite(cell).ok_or_else(|| TableError::NotNumeric {
                        column: spec.name.clone(),
                        row: row_no,
                        value: cell.to_string(),
                    })?;
                    Value::Numeric {
                        text: cell.to_string(),
                        value: v,
                    }
                }
                FeatureKind::Categorical => Value::Categorical(cell.to_string()),
            };
            values.push(value);
        }
        records.push(Record {
            values,
            label: row.iter().last().unwrap_or_default().to_string(),
        });
    }
    if records.is_empty() {
        return Err(TableError::EmptyDataset);
    }
    Dataset::new(schema.clone(), records)
}

/// Writes the dataset as RFC-4180 CSV: feature columns in schema order,
/// label last, cell texts verbatim.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), TableError> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let mut header: Vec<&str> = dataset
        .schema
        .features
        .iter()
        .map(|f| f.name.as_str())
        .collect();
    header.push(&dataset.schema.label.name);
    writer.write_record(&header)?;
    for record in &dataset.records {
        let mut row: Vec<&str> = record.values.iter().map(|v| v.as_text()).collect();
        row.push(&record.label);
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}
