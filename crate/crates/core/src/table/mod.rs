//! Typed tabular dataset model.
//!
//! A [`Dataset`] couples a [`Schema`] (ordered feature specs plus a
//! categorical label) with validated [`Record`]s and optional
//! train/val/test split tags. Numeric cells keep their original text form
//! so that re-serialization is byte-stable; exact-match privacy metrics
//! depend on that.

mod ingest;
mod preprocess;
mod snapshot;
mod split;

pub use ingest::{ingest_csv, ingest_csv_with_schema, write_csv};
pub use preprocess::{apply_preprocess, Transform};
pub use snapshot::{from_snapshot, read_snapshot, to_snapshot, write_snapshot};
pub use split::split;

use std::path::PathBuf;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Categorical stand-in for an empty cell.
pub const MISSING_TOKEN: &str = "missing";

#[derive(Debug, Error)]
pub enum TableError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("label column '{0}' not present in header")]
    MissingLabelColumn(String),
    #[error("duplicate column name '{0}'")]
    DuplicateColumn(String),
    #[error("dataset has no data rows")]
    EmptyDataset,
    #[error("column '{column}' row {row}: value '{value}' is not a finite number")]
    NotNumeric {
        column: String,
        row: usize,
        value: String,
    },
    #[error("column '{column}' row {row}: empty cell in numerical column")]
    MissingNumeric { column: String, row: usize },
    #[error("label column has a single class '{0}'; at least two classes are required")]
    SingleClass(String),
    #[error("transform references unknown column '{0}'")]
    UnknownColumn(String),
    #[error("label remap has no entry for observed value '{0}'")]
    UnmappedLabel(String),
    #[error("label remap collapses all classes into '{0}'")]
    RemapCollapsesClasses(String),
    #[error("column '{column}': cannot parse '{value}' as a date")]
    BadDate { column: String, value: String },
    #[error("cannot drop the label column '{0}'")]
    DropLabel(String),
    #[error("cannot apply '{transform}' to {kind} column '{column}'")]
    KindMismatch {
        transform: String,
        kind: String,
        column: String,
    },
    #[error("split ratios must be positive and sum to 1 (got {0:?})")]
    BadRatios((f64, f64, f64)),
    #[error("dataset too small to split: {0} records (need at least 3)")]
    TooSmallToSplit(usize),
    #[error("record does not conform to schema: {0}")]
    NonConforming(String),
    #[error("snapshot is malformed: {0}")]
    BadSnapshot(String),
}

/// Whether a column holds numbers or category tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numerical,
    Categorical,
}

/// One column of the table: its name, kind, and observed domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// Observed [min, max]; numerical columns only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub range: Option<(f64, f64)>,
    /// Ordered set of observed categories; categorical columns only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub categories: Option<IndexSet<String>>,
}

impl FeatureSpec {
    pub fn numerical(name: impl Into<String>, min: f64, max: f64) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Numerical,
            range: Some((min, max)),
            categories: None,
        }
    }

    pub fn categorical<I, S>(name: impl Into<String>, categories: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Categorical,
            range: None,
            categories: Some(categories.into_iter().map(Into::into).collect()),
        }
    }

    pub fn range_width(&self) -> f64 {
        match self.range {
            Some((min, max)) => max - min,
            None => 0.0,
        }
    }
}

/// Ordered feature specs plus the categorical label column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<FeatureSpec>,
    pub label: FeatureSpec,
}

impl Schema {
    pub fn new(features: Vec<FeatureSpec>, label: FeatureSpec) -> Self {
        debug_assert_eq!(label.kind, FeatureKind::Categorical);
        Schema { features, label }
    }

    /// Number of feature columns (the label is not counted).
    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    /// Ordered label classes.
    pub fn classes(&self) -> &IndexSet<String> {
        self.label
            .categories
            .as_ref()
            .expect("label is categorical")
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Validates a record against this schema (value kinds and domains).
    pub fn check_record(&self, record: &Record) -> Result<(), TableError> {
        if record.values.len() != self.features.len() {
            return Err(TableError::NonConforming(format!(
                "expected {} values, got {}",
                self.features.len(),
                record.values.len()
            )));
        }
        for (spec, value) in self.features.iter().zip(&record.values) {
            match (spec.kind, value) {
                (FeatureKind::Numerical, Value::Numeric { value, .. }) => {
                    if !value.is_finite() {
                        return Err(TableError::NonConforming(format!(
                            "non-finite value in '{}'",
                            spec.name
                        )));
                    }
                }
                (FeatureKind::Categorical, Value::Categorical(v)) => {
                    let cats = spec.categories.as_ref();
                    if !cats.is_some_and(|c| c.contains(v.as_str())) {
                        return Err(TableError::NonConforming(format!(
                            "value '{}' not a category of '{}'",
                            v, spec.name
                        )));
                    }
                }
                _ => {
                    return Err(TableError::NonConforming(format!(
                        "value kind mismatch in '{}'",
                        spec.name
                    )))
                }
            }
        }
        if !self.classes().contains(record.label.as_str()) {
            return Err(TableError::NonConforming(format!(
                "label '{}' not in classes",
                record.label
            )));
        }
        Ok(())
    }
}

/// One cell. Numeric cells keep the original text so writing the dataset
/// back out reproduces the input bytes.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Numeric { text: String, value: f64 },
    Categorical(String),
}

impl Value {
    pub fn numeric(text: impl Into<String>) -> Result<Self, String> {
        let text = text.into();
        match text.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Value::Numeric { text, value: v }),
            _ => Err(text),
        }
    }

    /// Text form of the cell, exactly as ingested or decoded.
    pub fn as_text(&self) -> &str {
        match self {
            Value::Numeric { text, .. } => text,
            Value::Categorical(s) => s,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Numeric { value, .. } => Some(*value),
            Value::Categorical(_) => None,
        }
    }
}

/// One row: feature values in schema order plus the label value.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub values: Vec<Value>,
    pub label: String,
}

impl Record {
    /// Value of the named feature, resolved through the schema order.
    pub fn value<'a>(&'a self, schema: &Schema, name: &str) -> Option<&'a Value> {
        schema.feature_index(name).map(|i| &self.values[i])
    }
}

/// Split tag for one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Schema plus validated records, optionally tagged with splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub records: Vec<Record>,
    splits: Option<Vec<Split>>,
}

impl Dataset {
    /// Builds a dataset, validating every record against the schema.
    pub fn new(schema: Schema, records: Vec<Record>) -> Result<Self, TableError> {
        for record in &records {
            schema.check_record(record)?;
        }
        Ok(Dataset {
            schema,
            records,
            splits: None,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Per-record split tags, if the dataset has been split.
    pub fn split_tags(&self) -> Option<&[Split]> {
        self.splits.as_deref()
    }

    pub(crate) fn set_splits(&mut self, splits: Vec<Split>) {
        assert_eq!(splits.len(), self.records.len());
        self.splits = Some(splits);
    }

    /// Indices tagged with `split`. On an untagged dataset `Train` returns
    /// every index and the other splits are empty.
    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        match &self.splits {
            Some(tags) => (0..self.records.len())
                .filter(|&i| tags[i] == split)
                .collect(),
            None => match split {
                Split::Train => (0..self.records.len()).collect(),
                _ => Vec::new(),
            },
        }
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices_of(Split::Train)
    }

    /// New untagged dataset holding clones of the selected records.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            splits: None,
        }
    }

    /// The records of one split as a standalone dataset.
    pub fn split_subset(&self, split: Split) -> Dataset {
        self.subset(&self.indices_of(split))
    }
}
