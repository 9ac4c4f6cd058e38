//! Nearest-neighbor grouping over mixed-type records.
//!
//! Each training record is paired with its k nearest neighbors under a
//! Gower-style distance: the mean over feature columns of a per-feature
//! distance, where numerical features contribute the range-normalized
//! absolute difference and categorical features an equality indicator.
//! Search is exact brute force; ties break toward the lower record index
//! so results are reproducible.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds;
use crate::table::{Dataset, FeatureKind, Record, Schema, TableError};

#[derive(Debug, Error)]
pub enum NeighborError {
    #[error("record does not conform to schema: {0}")]
    NonConforming(#[from] TableError),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} requires more than {train} training records")]
    KTooLarge { k: usize, train: usize },
    #[error("need at least 1 group")]
    ZeroCount,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("group export is malformed: {0}")]
    BadExport(String),
}

/// A target record with its k nearest training neighbors, or a sampled
/// k-record group when used for prompting (no target).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborGroup {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target_index: Option<usize>,
    /// Record indices into the source dataset, ascending distance.
    pub neighbor_indices: Vec<usize>,
    pub kept: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupPurpose {
    Finetune,
    Prompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSet {
    pub groups: Vec<NeighborGroup>,
    pub k: usize,
    pub purpose: GroupPurpose,
    /// True once the label-majority filter has removed discarded groups.
    pub filtered: bool,
}

/// Per-feature Gower distance, clamped to [0, 1]. The label column never
/// participates unless `include_label` is set (the DCR metric treats the
/// label as one more categorical feature).
fn distance_unchecked(a: &Record, b: &Record, schema: &Schema, include_label: bool) -> f64 {
    let mut total = 0.0;
    for (i, spec) in schema.features.iter().enumerate() {
        let d = match spec.kind {
            FeatureKind::Numerical => {
                let width = spec.range_width();
                if width == 0.0 {
                    0.0
                } else {
                    let av = a.values[i].as_number().expect("numeric value");
                    let bv = b.values[i].as_number().expect("numeric value");
                    ((av - bv).abs() / width).min(1.0)
                }
            }
            FeatureKind::Categorical => {
                if a.values[i].as_text() == b.values[i].as_text() {
                    0.0
                } else {
                    1.0
                }
            }
        };
        total += d;
    }
    let mut count = schema.features.len();
    if include_label {
        total += if a.label == b.label { 0.0 } else { 1.0 };
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Gower-style distance between two records in [0, 1]; label excluded.
pub fn mixed_distance(a: &Record, b: &Record, schema: &Schema) -> Result<f64, NeighborError> {
    schema.check_record(a)?;
    schema.check_record(b)?;
    Ok(distance_unchecked(a, b, schema, false))
}

/// As [`mixed_distance`] but with the label counted as a categorical
/// feature. Used by record-distance privacy metrics.
pub fn mixed_distance_with_label(
    a: &Record,
    b: &Record,
    schema: &Schema,
) -> Result<f64, NeighborError> {
    schema.check_record(a)?;
    schema.check_record(b)?;
    Ok(distance_unchecked(a, b, schema, true))
}

pub(crate) fn distance_for_metrics(a: &Record, b: &Record, schema: &Schema) -> f64 {
    distance_unchecked(a, b, schema, true)
}

/// One group per training record: the record plus its k nearest training
/// neighbors (target excluded, ties to the lower index). Unfiltered.
pub fn knn_groups(dataset: &Dataset, k: usize) -> Result<GroupSet, NeighborError> {
    if k == 0 {
        return Err(NeighborError::ZeroK);
    }
    let train = dataset.train_indices();
    if train.len() <= k {
        return Err(NeighborError::KTooLarge {
            k,
            train: train.len(),
        });
    }
    let schema = &dataset.schema;
    let groups: Vec<NeighborGroup> = train
        .par_iter()
        .map(|&target| {
            let mut distances: Vec<(f64, usize)> = train
                .iter()
                .filter(|&&other| other != target)
                .map(|&other| {
                    (
                        distance_unchecked(
                            &dataset.records[target],
                            &dataset.records[other],
                            schema,
                            false,
                        ),
                        other,
                    )
                })
                .collect();
            distances.sort_by(|x, y| {
                x.0.partial_cmp(&y.0)
                    .expect("distances are finite")
                    .then(x.1.cmp(&y.1))
            });
            NeighborGroup {
                target_index: Some(target),
                neighbor_indices: distances[..k].iter().map(|&(_, i)| i).collect(),
                kept: true,
            }
        })
        .collect();
    Ok(GroupSet {
        groups,
        k,
        purpose: GroupPurpose::Finetune,
        filtered: false,
    })
}

/// Keep/discard decision per group: a group is discarded iff strictly
/// more than half of its neighbors carry a label different from the
/// target's. Looks only at labels.
pub fn filter_decisions(groups: &GroupSet, dataset: &Dataset) -> Vec<bool> {
    groups
        .groups
        .iter()
        .map(|group| {
            let target = group.target_index.expect("finetune group has a target");
            let target_label = &dataset.records[target].label;
            let differing = group
                .neighbor_indices
                .iter()
                .filter(|&&i| dataset.records[i].label != *target_label)
                .count();
            2 * differing <= groups.k
        })
        .collect()
}

/// Applies the label-majority filter, removing discarded groups.
pub fn filter_groups(groups: &GroupSet, dataset: &Dataset) -> GroupSet {
    debug_assert_eq!(groups.purpose, GroupPurpose::Finetune);
    debug_assert!(!groups.filtered);
    let decisions = filter_decisions(groups, dataset);
    let kept: Vec<NeighborGroup> = groups
        .groups
        .iter()
        .zip(&decisions)
        .filter(|(_, &keep)| keep)
        .map(|(g, _)| NeighborGroup {
            kept: true,
            ..g.clone()
        })
        .collect();
    GroupSet {
        groups: kept,
        k: groups.k,
        purpose: GroupPurpose::Finetune,
        filtered: true,
    }
}

/// Builds `count` prompt groups of k training records each, sampled
/// uniformly without replacement within a group and independently across
/// groups. Prompt groups have no target and are never filtered.
pub fn build_prompt_groups(
    dataset: &Dataset,
    k: usize,
    count: usize,
    seed: u64,
) -> Result<GroupSet, NeighborError> {
    if k == 0 {
        return Err(NeighborError::ZeroK);
    }
    if count == 0 {
        return Err(NeighborError::ZeroCount);
    }
    let train = dataset.train_indices();
    if train.len() < k {
        return Err(NeighborError::KTooLarge {
            k,
            train: train.len(),
        });
    }
    let groups = (0..count)
        .map(|i| {
            let mut rng = seeds::rng(seeds::derive(seed, "prompt-group", i as u64));
            let mut pool = train.clone();
            pool.shuffle(&mut rng);
            NeighborGroup {
                target_index: None,
                neighbor_indices: pool.into_iter().take(k).collect(),
                kept: true,
            }
        })
        .collect();
    Ok(GroupSet {
        groups,
        k,
        purpose: GroupPurpose::Prompt,
        filtered: false,
    })
}

/// Audit export: one JSON object per group.
pub fn write_groups_jsonl(groups: &GroupSet, path: impl AsRef<Path>) -> Result<(), NeighborError> {
    let mut out = String::new();
    for group in &groups.groups {
        out.push_str(&serde_json::to_string(group).expect("group serializes"));
        out.push('\n');
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Loads an audit export back into a [`GroupSet`].
pub fn read_groups_jsonl(
    path: impl AsRef<Path>,
    k: usize,
    purpose: GroupPurpose,
    filtered: bool,
) -> Result<GroupSet, NeighborError> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut groups = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let group: NeighborGroup = serde_json::from_str(line)
            .map_err(|e| NeighborError::BadExport(format!("line {}: {e}", lineno + 1)))?;
        if group.neighbor_indices.len() != k {
            return Err(NeighborError::BadExport(format!(
                "line {}: expected {} neighbors",
                lineno + 1,
                k
            )));
        }
        groups.push(group);
    }
    Ok(GroupSet {
        groups,
        k,
        purpose,
        filtered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{FeatureSpec, Record, Value};

    fn numeric_line_dataset(values: &[f64]) -> Dataset {
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let schema = Schema::new(
            vec![FeatureSpec::numerical("x", min, max)],
            FeatureSpec::categorical("label", ["0", "1"]),
        );
        let records = values
            .iter()
            .enumerate()
            .map(|(i, v)| Record {
                values: vec![Value::numeric(format!("{v}")).unwrap()],
                label: (i % 2).to_string(),
            })
            .collect();
        Dataset::new(schema, records).unwrap()
    }

    #[test]
    fn identical_records_have_zero_distance() {
        let ds = numeric_line_dataset(&[0.0, 1.0]);
        let d = mixed_distance(&ds.records[0], &ds.records[0], &ds.schema).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn one_categorical_difference_out_of_four_features_is_a_quarter() {
        let schema = Schema::new(
            vec![
                FeatureSpec::categorical("a", ["x", "y"]),
                FeatureSpec::categorical("b", ["x", "y"]),
                FeatureSpec::categorical("c", ["x", "y"]),
                FeatureSpec::categorical("d", ["x", "y"]),
            ],
            FeatureSpec::categorical("label", ["0", "1"]),
        );
        let mk = |vals: [&str; 4]| Record {
            values: vals.iter().map(|v| Value::Categorical(v.to_string())).collect(),
            label: "0".into(),
        };
        let a = mk(["x", "x", "x", "x"]);
        let b = mk(["x", "x", "x", "y"]);
        assert_eq!(mixed_distance(&a, &b, &schema).unwrap(), 0.25);
    }

    #[test]
    fn numeric_distance_is_range_normalized() {
        let schema = Schema::new(
            vec![FeatureSpec::numerical("x", 0.0, 100.0)],
            FeatureSpec::categorical("label", ["0", "1"]),
        );
        let mk = |v: &str| Record {
            values: vec![Value::numeric(v).unwrap()],
            label: "0".into(),
        };
        let d = mixed_distance(&mk("30"), &mk("80"), &schema).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_width_range_contributes_zero() {
        let schema = Schema::new(
            vec![FeatureSpec::numerical("x", 5.0, 5.0)],
            FeatureSpec::categorical("label", ["0", "1"]),
        );
        let mk = |v: &str| Record {
            values: vec![Value::numeric(v).unwrap()],
            label: "0".into(),
        };
        assert_eq!(mixed_distance(&mk("5"), &mk("5"), &schema).unwrap(), 0.0);
    }

    #[test]
    fn non_conforming_record_is_an_error() {
        let ds = numeric_line_dataset(&[0.0, 1.0]);
        let bad = Record {
            values: vec![Value::Categorical("x".into())],
            label: "0".into(),
        };
        assert!(mixed_distance(&bad, &ds.records[0], &ds.schema).is_err());
    }

    #[test]
    fn collinear_points_pick_the_middle() {
        // Points 0, 1, 10: the nearest neighbor of 0 is 1, and of 10 is 1.
        let ds = numeric_line_dataset(&[0.0, 1.0, 10.0]);
        let groups = knn_groups(&ds, 1).unwrap();
        assert_eq!(groups.groups[0].neighbor_indices, vec![1]);
        assert_eq!(groups.groups[2].neighbor_indices, vec![1]);
        assert_eq!(groups.groups[1].neighbor_indices, vec![0]);
    }

    #[test]
    fn duplicate_records_tie_break_by_index() {
        let ds = numeric_line_dataset(&[3.0, 3.0, 3.0, 9.0]);
        let groups = knn_groups(&ds, 1).unwrap();
        assert_eq!(groups.groups[0].neighbor_indices, vec![1]);
        assert_eq!(groups.groups[1].neighbor_indices, vec![0]);
        assert_eq!(groups.groups[2].neighbor_indices, vec![0]);
    }

    #[test]
    fn k_not_smaller_than_train_is_an_error() {
        let ds = numeric_line_dataset(&[0.0, 1.0, 2.0]);
        assert!(matches!(
            knn_groups(&ds, 3),
            Err(NeighborError::KTooLarge { k: 3, train: 3 })
        ));
        assert!(matches!(knn_groups(&ds, 0), Err(NeighborError::ZeroK)));
    }

    fn groups_with_labels(k: usize, differing: usize) -> (GroupSet, Dataset) {
        // Target at index 0 with label "0", k neighbors of which
        // `differing` carry label "1".
        let n = k + 1;
        let values: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut ds = numeric_line_dataset(&values);
        for (i, record) in ds.records.iter_mut().enumerate() {
            record.label = if i == 0 || i > differing { "0" } else { "1" }.to_string();
        }
        let set = GroupSet {
            groups: vec![NeighborGroup {
                target_index: Some(0),
                neighbor_indices: (1..=k).collect(),
                kept: true,
            }],
            k,
            purpose: GroupPurpose::Finetune,
            filtered: false,
        };
        (set, ds)
    }

    #[test]
    fn filter_keeps_unanimous_groups() {
        let (set, ds) = groups_with_labels(5, 0);
        assert_eq!(filter_groups(&set, &ds).groups.len(), 1);
    }

    #[test]
    fn filter_discards_when_three_of_five_differ() {
        let (set, ds) = groups_with_labels(5, 3);
        assert_eq!(filter_groups(&set, &ds).groups.len(), 0);
    }

    #[test]
    fn filter_keeps_when_two_of_four_differ() {
        let (set, ds) = groups_with_labels(4, 2);
        assert_eq!(filter_groups(&set, &ds).groups.len(), 1);
    }

    #[test]
    fn prompt_groups_are_deterministic_and_targetless() {
        let ds = numeric_line_dataset(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let a = build_prompt_groups(&ds, 3, 4, 99).unwrap();
        let b = build_prompt_groups(&ds, 3, 4, 99).unwrap();
        assert_eq!(a, b);
        for group in &a.groups {
            assert!(group.target_index.is_none());
            assert_eq!(group.neighbor_indices.len(), 3);
            let mut unique = group.neighbor_indices.clone();
            unique.sort_unstable();
            unique.dedup();
            assert_eq!(unique.len(), 3, "no replacement within a group");
        }
        let c = build_prompt_groups(&ds, 3, 4, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn prompt_group_with_k_equal_train_uses_every_record() {
        let ds = numeric_line_dataset(&[0.0, 1.0, 2.0]);
        let set = build_prompt_groups(&ds, 3, 1, 7).unwrap();
        let mut indices = set.groups[0].neighbor_indices.clone();
        indices.sort_unstable();
        assert_eq!(indices, vec![0, 1, 2]);
    }

    #[test]
    fn groups_jsonl_round_trips() {
        let ds = numeric_line_dataset(&[0.0, 1.0, 2.0, 3.0]);
        let groups = knn_groups(&ds, 2).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        write_groups_jsonl(&groups, file.path()).unwrap();
        let back = read_groups_jsonl(file.path(), 2, GroupPurpose::Finetune, false).unwrap();
        assert_eq!(groups, back);
    }
}
