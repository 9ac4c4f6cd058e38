//! Property tests: distance axioms, kNN against a brute-force oracle,
//! codec round-trips, decoder robustness, filter label-only dependence,
//! and the weighted-F1 oracle.

use indexmap::IndexSet;
use proptest::prelude::*;

use tabforge_core::codec::{decode_record, encode_record};
use tabforge_core::efficacy::{weighted_f1, PredictionRecord};
use tabforge_core::fixtures::random_dataset;
use tabforge_core::neighbors::{
    filter_decisions, filter_groups, knn_groups, mixed_distance, GroupPurpose, GroupSet,
    NeighborGroup,
};
use tabforge_core::table::{Dataset, FeatureKind, Record, Split, Value};

/// Independent O(n^2) kNN oracle: per-feature arithmetic written out
/// directly, selection by repeated linear minimum scans.
fn oracle_knn(dataset: &Dataset, k: usize) -> Vec<Vec<usize>> {
    let train = dataset.train_indices();
    let schema = &dataset.schema;
    let dist = |a: usize, b: usize| -> f64 {
        let ra = &dataset.records[a];
        let rb = &dataset.records[b];
        let mut sum = 0.0;
        for (i, spec) in schema.features.iter().enumerate() {
            sum += match spec.kind {
                FeatureKind::Numerical => {
                    let (lo, hi) = spec.range.unwrap();
                    if hi - lo == 0.0 {
                        0.0
                    } else {
                        let d = (ra.values[i].as_number().unwrap()
                            - rb.values[i].as_number().unwrap())
                        .abs()
                            / (hi - lo);
                        if d > 1.0 {
                            1.0
                        } else {
                            d
                        }
                    }
                }
                FeatureKind::Categorical => {
                    if ra.values[i].as_text() == rb.values[i].as_text() {
                        0.0
                    } else {
                        1.0
                    }
                }
            };
        }
        sum / schema.features.len() as f64
    };

    train
        .iter()
        .map(|&target| {
            let mut candidates: Vec<usize> =
                train.iter().copied().filter(|&o| o != target).collect();
            let mut picked = Vec::with_capacity(k);
            for _ in 0..k {
                let mut best = 0usize;
                for (pos, &candidate) in candidates.iter().enumerate() {
                    let (db, dc) = (dist(target, candidates[best]), dist(target, candidate));
                    if dc < db || (dc == db && candidate < candidates[best]) {
                        best = pos;
                    }
                }
                picked.push(candidates.remove(best));
            }
            picked
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn knn_matches_brute_force_oracle(
        seed in 0u64..1000,
        n in 8usize..60,
        numeric in 0usize..3,
        categorical in 0usize..3,
        k in 1usize..6,
    ) {
        prop_assume!(numeric + categorical >= 1);
        prop_assume!(n > k);
        let ds = random_dataset(seed, n, numeric, categorical, 2);
        let groups = knn_groups(&ds, k).unwrap();
        let expected = oracle_knn(&ds, k);
        for (group, oracle) in groups.groups.iter().zip(&expected) {
            prop_assert_eq!(&group.neighbor_indices, oracle);
        }
    }

    #[test]
    fn distance_axioms_hold(seed in 0u64..500, i in 0usize..20, j in 0usize..20) {
        let ds = random_dataset(seed, 20, 2, 2, 2);
        let a = &ds.records[i];
        let b = &ds.records[j];
        let dab = mixed_distance(a, b, &ds.schema).unwrap();
        let dba = mixed_distance(b, a, &ds.schema).unwrap();
        prop_assert_eq!(dab, dba);
        prop_assert!((0.0..=1.0).contains(&dab));
        if a.values == b.values {
            prop_assert_eq!(dab, 0.0);
        } else {
            prop_assert!(dab > 0.0);
        }
    }

    #[test]
    fn codec_round_trips_any_record_and_seed(seed in 0u64..2000, permute_seed in 0u64..2000) {
        let ds = random_dataset(seed % 50, 10, 2, 2, 2);
        let record = &ds.records[(seed % 10) as usize];
        let encoded = encode_record(record, &ds.schema, permute_seed, true);
        let decoded = decode_record(&encoded.render(), &ds.schema).unwrap();
        prop_assert_eq!(&decoded, record);
    }

    #[test]
    fn decoder_never_panics_on_arbitrary_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..300)) {
        let ds = random_dataset(1, 5, 2, 2, 2);
        let text = String::from_utf8_lossy(&bytes);
        let _ = decode_record(&text, &ds.schema);
    }

    #[test]
    fn decoder_never_panics_on_mutated_encodings(
        seed in 0u64..500,
        cut in 0usize..100,
        insert in 0usize..100,
        junk in "[ -~]{0,20}",
    ) {
        let ds = random_dataset(seed % 20, 10, 2, 2, 2);
        let mut text = encode_record(&ds.records[0], &ds.schema, seed, true).render();
        let mut cut = cut.min(text.len());
        while !text.is_char_boundary(cut) {
            cut -= 1;
        }
        text.truncate(cut);
        let insert = insert.min(text.len());
        if text.is_char_boundary(insert) {
            text.insert_str(insert, &junk);
        }
        let _ = decode_record(&text, &ds.schema);
    }

    #[test]
    fn filter_looks_only_at_labels(seed in 0u64..300) {
        let ds = random_dataset(seed, 30, 2, 2, 2);
        let groups = knn_groups(&ds, 3).unwrap();
        let before = filter_decisions(&groups, &ds);

        // Permute every non-label column in a value-consistent way:
        // reverse each record's numeric sign pattern by swapping two rows'
        // feature values while keeping labels in place.
        let mut shuffled = ds.records.clone();
        let rotation = 7 % shuffled.len().max(1);
        shuffled.rotate_left(rotation);
        let relabeled: Vec<Record> = shuffled
            .iter()
            .zip(&ds.records)
            .map(|(donor, original)| Record {
                values: donor.values.clone(),
                label: original.label.clone(),
            })
            .collect();
        let permuted = Dataset::new(ds.schema.clone(), relabeled).unwrap();
        let after = filter_decisions(&groups, &permuted);
        prop_assert_eq!(before, after);
    }

    #[test]
    fn weighted_f1_matches_oracle(
        golds in proptest::collection::vec(0usize..3, 1..40),
        preds in proptest::collection::vec(proptest::option::of(0usize..3), 1..40),
    ) {
        let classes: IndexSet<String> = (0..3).map(|c| c.to_string()).collect();
        let n = golds.len().min(preds.len());
        let records: Vec<PredictionRecord> = (0..n)
            .map(|i| PredictionRecord {
                row: i,
                gold: golds[i].to_string(),
                raw_text: String::new(),
                parsed: preds[i].map(|p| p.to_string()),
            })
            .collect();
        let report = weighted_f1(&records, &classes, "prop", 0).unwrap();

        // Brute-force oracle: direct per-class counting loops.
        let mut expected = 0.0;
        for class in 0..3 {
            let class_str = class.to_string();
            let tp = records.iter().filter(|r| r.gold == class_str && r.parsed.as_deref() == Some(class_str.as_str())).count();
            let fp = records.iter().filter(|r| r.gold != class_str && r.parsed.as_deref() == Some(class_str.as_str())).count();
            let fn_ = records.iter().filter(|r| r.gold == class_str && r.parsed.as_deref() != Some(class_str.as_str())).count();
            let support = records.iter().filter(|r| r.gold == class_str).count();
            let f1 = if 2 * tp + fp + fn_ == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
            expected += f1 * support as f64 / n as f64;
        }
        prop_assert!((report.weighted_f1 - expected).abs() < 1e-12);
    }

    #[test]
    fn split_tags_partition_under_any_seed(seed in 0u64..400, n in 10usize..120) {
        let ds = random_dataset(seed, n, 1, 1, 2);
        let tagged = tabforge_core::table::split(&ds, (0.7, 0.1, 0.2), seed).unwrap();
        let tags = tagged.split_tags().unwrap();
        prop_assert_eq!(tags.len(), n);
        let train = tagged.indices_of(Split::Train).len();
        let val = tagged.indices_of(Split::Val).len();
        let test = tagged.indices_of(Split::Test).len();
        prop_assert_eq!(train + val + test, n);
        prop_assert_eq!(val, (0.1 * n as f64).floor() as usize);
        prop_assert_eq!(test, (0.2 * n as f64).floor() as usize);
    }
}

#[test]
fn prompt_groups_never_contain_a_target() {
    for seed in 0..20 {
        let ds = random_dataset(seed, 25, 2, 1, 2);
        let groups =
            tabforge_core::neighbors::build_prompt_groups(&ds, 5, 10, seed).unwrap();
        assert_eq!(groups.purpose, GroupPurpose::Prompt);
        for group in &groups.groups {
            assert!(group.target_index.is_none());
        }
    }
}

#[test]
fn filter_rule_matches_exhaustive_label_patterns() {
    // Every (k, differing-count) pattern for k in 2..=5, checked against
    // the strict-majority rule.
    for k in 2usize..=5 {
        for differing in 0..=k {
            let n = k + 2;
            let ds = random_dataset(k as u64 * 100 + differing as u64, n, 1, 0, 2);
            let mut records = ds.records.clone();
            for (i, record) in records.iter_mut().enumerate() {
                record.label = if i == 0 || i > differing { "0" } else { "1" }.to_string();
            }
            let ds = Dataset::new(ds.schema.clone(), records).unwrap();
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
            let kept = filter_groups(&set, &ds).groups.len() == 1;
            let expected = 2 * differing <= k;
            assert_eq!(
                kept, expected,
                "k={k} differing={differing}: kept={kept}, expected {expected}"
            );
        }
    }
}

#[test]
fn numeric_text_forms_survive_encode_decode() {
    // Leading zeros and trailing decimals must come back byte-identical.
    let ds = random_dataset(2, 4, 1, 0, 2);
    let mut record = ds.records[0].clone();
    record.values[0] = Value::numeric("007.50").unwrap();
    let encoded = encode_record(&record, &ds.schema, 9, true);
    let decoded = decode_record(&encoded.render(), &ds.schema).unwrap();
    assert_eq!(decoded.values[0].as_text(), "007.50");
}
