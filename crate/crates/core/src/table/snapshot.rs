//! Dataset snapshots: JSON-lines with a schema header object, then one
//! object per record. Values are stored as their verbatim text forms and
//! re-typed through the schema on load, so a snapshot round-trips
//! bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureKind, Record, Schema, Split, TableError, Value};

#[derive(Serialize, Deserialize)]
struct Header {
    schema: Schema,
}

#[derive(Serialize, Deserialize)]
struct Row {
    values: Vec<String>,
    label: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    split: Option<Split>,
}

pub fn to_snapshot(dataset: &Dataset) -> String {
    let mut out = String::new();
    out.push_str(
        &serde_json::to_string(&Header {
            schema: dataset.schema.clone(),
        })
        .expect("schema serializes"),
    );
    out.push('\n');
    for (i, record) in dataset.records.iter().enumerate() {
        let row = Row {
            values: record.values.iter().map(|v| v.as_text().to_string()).collect(),
            label: record.label.clone(),
            split: dataset.split_tags().map(|tags| tags[i]),
        };
        out.push_str(&serde_json::to_string(&row).expect("row serializes"));
        out.push('\n');
    }
    out
}

pub fn from_snapshot(text: &str) -> Result<Dataset, TableError> {
    let mut lines = text.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| TableError::BadSnapshot("empty snapshot".into()))?;
    let header: Header = serde_json::from_str(header_line)
        .map_err(|e| TableError::BadSnapshot(format!("header: {e}")))?;
    let schema = header.schema;

    let mut records = Vec::new();
    let mut tags = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(line)
            .map_err(|e| TableError::BadSnapshot(format!("line {}: {e}", lineno + 2)))?;
        if row.values.len() != schema.features.len() {
            return Err(TableError::BadSnapshot(format!(
                "line {}: expected {} values",
                lineno + 2,
                schema.features.len()
            )));
        }
        let mut values = Vec::with_capacity(row.values.len());
        for (spec, text) in schema.features.iter().zip(row.values) {
            let value = match spec.kind {
                FeatureKind::Numerical => {
                    Value::numeric(text.clone()).map_err(|t| TableError::NotNumeric {
                        column: spec.name.clone(),
                        row: lineno,
                        value: t,
                    })?
                }
                FeatureKind::Categorical => Value::Categorical(text),
            };
            values.push(value);
        }
        records.push(Record {
            values,
            label: row.label,
        });
        if let Some(split) = row.split {
            tags.push(split);
        }
    }
    if !tags.is_empty() && tags.len() != records.len() {
        return Err(TableError::BadSnapshot(
            "split tags must cover all records or none".into(),
        ));
    }
    let mut dataset = Dataset::new(schema, records)?;
    if !tags.is_empty() {
        dataset.set_splits(tags);
    }
    Ok(dataset)
}

pub fn write_snapshot(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), TableError> {
    fs::write(path.as_ref(), to_snapshot(dataset))?;
    Ok(())
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<Dataset, TableError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(TableError::FileNotFound(path.to_path_buf()));
    }
    from_snapshot(&fs::read_to_string(path)?)
}
