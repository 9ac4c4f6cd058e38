//! Dataset preprocessing transforms: label remapping, date-to-timestamp
//! conversion, and column drops.

use std::collections::BTreeMap;

use chrono::{NaiveDate, NaiveDateTime};
use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureKind, FeatureSpec, TableError, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Transform {
    /// Rewrites every label through the table; all observed classes must
    /// be covered.
    LabelRemap { map: BTreeMap<String, String> },
    /// Converts a categorical date column to numeric epoch seconds.
    DateToTimestamp { column: String },
    /// Removes a feature column.
    DropColumn { column: String },
}

const DATE_FORMATS: [&str; 6] = [
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%d",
    "%d-%m-%Y",
    "%m/%d/%Y",
];

fn parse_epoch_seconds(value: &str) -> Option<i64> {
    let trimmed = value.trim();
    for fmt in DATE_FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(trimmed, fmt) {
            return Some(dt.and_utc().timestamp());
        }
        if let Ok(d) = NaiveDate::parse_from_str(trimmed, fmt) {
            return Some(d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp());
        }
    }
    None
}

/// Applies transforms in order, producing a new dataset with an adjusted
/// schema.
pub fn apply_preprocess(
    dataset: &Dataset,
    transforms: &[Transform],
) -> Result<Dataset, TableError> {
    let mut schema = dataset.schema.clone();
    let mut records = dataset.records.clone();

    for transform in transforms {
        match transform {
            Transform::LabelRemap { map } => {
                let classes = schema.classes().clone();
                let mut remapped = IndexSet::new();
                for class in &classes {
                    let target = map
                        .get(class)
                        .ok_or_else(|| TableError::UnmappedLabel(class.clone()))?;
                    remapped.insert(target.clone());
                }
                if remapped.len() < 2 {
                    return Err(TableError::RemapCollapsesClasses(
                        remapped.first().cloned().unwrap_or_default(),
                    ));
                }
                for record in &mut records {
                    record.label = map[&record.label].clone();
                }
                schema.label.categories = Some(remapped);
            }
            Transform::DateToTimestamp { column } => {
                let idx = schema
                    .feature_index(column)
                    .ok_or_else(|| TableError::UnknownColumn(column.clone()))?;
                if schema.features[idx].kind != FeatureKind::Categorical {
                    return Err(TableError::KindMismatch {
                        transform: "date_to_timestamp".into(),
                        kind: "numerical".into(),
                        column: column.clone(),
                    });
                }
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                for record in &mut records {
                    let text = record.values[idx].as_text().to_string();
                    let secs = parse_epoch_seconds(&text).ok_or_else(|| TableError::BadDate {
                        column: column.clone(),
                        value: text.clone(),
                    })?;
                    min = min.min(secs as f64);
                    max = max.max(secs as f64);
                    record.values[idx] = Value::Numeric {
                        text: secs.to_string(),
                        value: secs as f64,
                    };
                }
                schema.features[idx] = FeatureSpec::numerical(column.clone(), min, max);
            }
            Transform::DropColumn { column } => {
                if *column == schema.label.name {
                    return Err(TableError::DropLabel(column.clone()));
                }
                let idx = schema
                    .feature_index(column)
                    .ok_or_else(|| TableError::UnknownColumn(column.clone()))?;
                schema.features.remove(idx);
                for record in &mut records {
                    record.values.remove(idx);
                }
            }
        }
    }

    let mut out = Dataset::new(schema, records)?;
    if let Some(tags) = dataset.split_tags() {
        out.set_splits(tags.to_vec());
    }
    Ok(out)
}
