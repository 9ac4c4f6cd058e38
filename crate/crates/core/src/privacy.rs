//! Privacy metric suite for synthetic tables: distance to closest record
//! (DCR), new-row synthesis rate (NRS), and the perplexity-gap leakage
//! test (DLT).
//!
//! DCR distances use the normalized mixed-type record distance with the
//! label counted as a categorical feature, so values land in [0, 1];
//! published DCR figures computed on unnormalized features live on a
//! different scale and are not comparable. DLT scores the single-record
//! text encodings (not full k-example prompts) under the generator:
//! leakage shows up as the generator liking real training rows more than
//! its own output.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, GenerationBackend};
use crate::codec::encode_record;
use crate::neighbors::distance_for_metrics;
use crate::table::{Dataset, FeatureKind};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("synthetic and real schemas differ")]
    SchemaMismatch,
    #[error("metric input is empty: {0}")]
    EmptyInput(&'static str),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Metric bundle written by the evaluation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub dcr_mean: f64,
    pub dcr_median: f64,
    pub nrs: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ppl_train: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ppl_syn: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dlt: Option<f64>,
    pub nrs_tolerance: f64,
    pub distance_metric: String,
}

/// Per-row minimum distances from each synthetic row to the real
/// training rows.
pub fn dcr_minima(synthetic: &Dataset, real_train: &Dataset) -> Result<Vec<f64>, MetricError> {
    if synthetic.schema != real_train.schema {
        return Err(MetricError::SchemaMismatch);
    }
    if synthetic.is_empty() {
        return Err(MetricError::EmptyInput("synthetic dataset"));
    }
    if real_train.is_empty() {
        return Err(MetricError::EmptyInput("real training dataset"));
    }
    let schema = &synthetic.schema;
    Ok(synthetic
        .records
        .par_iter()
        .map(|s| {
            real_train
                .records
                .iter()
                .map(|r| distance_for_metrics(s, r, schema))
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

/// Distance to closest record: mean and median of per-row minima.
/// Higher means the synthetic rows sit farther from the real data.
pub fn dcr(synthetic: &Dataset, real_train: &Dataset) -> Result<(f64, f64), MetricError> {
    let minima = dcr_minima(synthetic, real_train)?;
    let mean = minima.iter().sum::<f64>() / minima.len() as f64;
    let mut sorted = minima;
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    Ok((mean, median))
}

/// New-row synthesis rate: the fraction of synthetic rows with no
/// matching real row. A match needs every categorical value (and the
/// label) equal and every numeric value within `|s - r| <= tol * |r|`.
pub fn nrs(
    synthetic: &Dataset,
    real_train: &Dataset,
    numeric_tolerance: f64,
) -> Result<f64, MetricError> {
    if synthetic.schema != real_train.schema {
        return Err(MetricError::SchemaMismatch);
    }
    if synthetic.is_empty() {
        return Err(MetricError::EmptyInput("synthetic dataset"));
    }
    if real_train.is_empty() {
        return Err(MetricError::EmptyInput("real training dataset"));
    }
    let schema = &synthetic.schema;
    let new_rows = synthetic
        .records
        .par_iter()
        .filter(|s| {
            !real_train.records.iter().any(|r| {
                if s.label != r.label {
                    return false;
                }
                schema
                    .features
                    .iter()
                    .enumerate()
                    .all(|(i, spec)| match spec.kind {
                        FeatureKind::Numerical => {
                            let sv = s.values[i].as_number().expect("numeric");
                            let rv = r.values[i].as_number().expect("numeric");
                            (sv - rv).abs() <= numeric_tolerance * rv.abs()
                        }
                        FeatureKind::Categorical => {
                            s.values[i].as_text() == r.values[i].as_text()
                        }
                    })
            })
        })
        .count();
    Ok(new_rows as f64 / synthetic.len() as f64)
}

/// Dataset-level perplexity: the arithmetic mean over samples of each
/// sample's exponentiated mean negative token log-probability.
pub fn perplexity(
    texts: &[String],
    backend: &dyn GenerationBackend,
) -> Result<f64, MetricError> {
    if texts.is_empty() {
        return Err(MetricError::EmptyInput("texts"));
    }
    let mut total = 0.0;
    for text in texts {
        let scored = backend.score(text)?;
        total += scored.perplexity();
    }
    Ok(total / texts.len() as f64)
}

/// Canonical-order single-record encodings, the text form scored by DLT.
pub fn record_texts(dataset: &Dataset) -> Vec<String> {
    dataset
        .records
        .iter()
        .map(|r| encode_record(r, &dataset.schema, 0, false).render())
        .collect()
}

/// Data leakage test: perplexity of the real training encodings minus
/// perplexity of the synthetic encodings under the generator. Negative
/// values mean the generator assigns higher likelihood to the real rows
/// it was trained on; larger is better for privacy.
pub fn dlt(
    real_train: &Dataset,
    synthetic: &Dataset,
    backend: &dyn GenerationBackend,
) -> Result<f64, MetricError> {
    let ppl_train = perplexity(&record_texts(real_train), backend)?;
    let ppl_syn = perplexity(&record_texts(synthetic), backend)?;
    Ok(ppl_train - ppl_syn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockBackend, MockSpec};
    use crate::fixtures::random_dataset;
    use crate::table::{Dataset, FeatureSpec, Record, Schema, Value};

    fn fixture_schema() -> Schema {
        Schema::new(
            vec![
                FeatureSpec::numerical("x", 0.0, 10.0),
                FeatureSpec::categorical("c", ["r", "s"]),
            ],
            FeatureSpec::categorical("y", ["0", "1"]),
        )
    }

    fn row(x: &str, c: &str, y: &str) -> Record {
        Record {
            values: vec![Value::numeric(x).unwrap(), Value::Categorical(c.into())],
            label: y.into(),
        }
    }

    fn real() -> Dataset {
        Dataset::new(fixture_schema(), vec![row("0", "r", "0"), row("10", "s", "1")]).unwrap()
    }

    #[test]
    fn dcr_of_a_copy_is_zero() {
        let ds = random_dataset(23, 20, 2, 2, 2);
        let (mean, median) = dcr(&ds, &ds).unwrap();
        assert_eq!(mean, 0.0);
        assert_eq!(median, 0.0);
    }

    #[test]
    fn dcr_takes_the_row_minimum() {
        // One synthetic row at distances 0.2 and 0.7 from the two real rows.
        let schema = Schema::new(
            vec![FeatureSpec::numerical("x", 0.0, 10.0)],
            FeatureSpec::categorical("y", ["0", "1"]),
        );
        let real = Dataset::new(
            schema.clone(),
            vec![
                Record { values: vec![Value::numeric("4").unwrap()], label: "0".into() },
                Record { values: vec![Value::numeric("4").unwrap()], label: "1".into() },
            ],
        )
        .unwrap();
        let syn = Dataset::new(
            schema,
            vec![Record { values: vec![Value::numeric("8").unwrap()], label: "0".into() }],
        )
        .unwrap();
        // d(syn, real0) = (0.4 + 0)/2 = 0.2; d(syn, real1) = (0.4 + 1)/2 = 0.7.
        let (mean, median) = dcr(&syn, &real).unwrap();
        assert!((mean - 0.2).abs() < 1e-12);
        assert!((median - 0.2).abs() < 1e-12);
    }

    #[test]
    fn five_row_hand_fixture() {
        let syn = Dataset::new(
            fixture_schema(),
            vec![
                row("0", "r", "0"),
                row("5", "r", "0"),
                row("10", "s", "1"),
                row("2", "s", "0"),
                row("9", "r", "1"),
            ],
        )
        .unwrap();
        let (mean, median) = dcr(&syn, &real()).unwrap();
        // Hand-computed minima: [0, 1/6, 0, 2/5, 11/30].
        assert!((mean - 14.0 / 75.0).abs() < 1e-12);
        assert!((median - 1.0 / 6.0).abs() < 1e-12);
        let nrs_value = nrs(&syn, &real(), 0.01).unwrap();
        assert!((nrs_value - 0.6).abs() < 1e-12);
    }

    #[test]
    fn nrs_bounds() {
        let ds = random_dataset(29, 15, 2, 2, 2);
        assert_eq!(nrs(&ds, &ds, 0.01).unwrap(), 0.0);
        // Disjoint in a categorical feature.
        let schema = fixture_schema();
        let real = Dataset::new(schema.clone(), vec![row("1", "r", "0"), row("2", "r", "1")]).unwrap();
        let syn = Dataset::new(schema, vec![row("1", "s", "0"), row("2", "s", "1")]).unwrap();
        assert_eq!(nrs(&syn, &real, 0.01).unwrap(), 1.0);
    }

    #[test]
    fn nrs_numeric_tolerance_is_relative_to_the_real_value() {
        let schema = Schema::new(
            vec![FeatureSpec::numerical("x", 0.0, 200.0)],
            FeatureSpec::categorical("y", ["0", "1"]),
        );
        let real = Dataset::new(
            schema.clone(),
            vec![
                Record { values: vec![Value::numeric("100").unwrap()], label: "0".into() },
                Record { values: vec![Value::numeric("1").unwrap()], label: "1".into() },
            ],
        )
        .unwrap();
        let syn = Dataset::new(
            schema,
            vec![Record { values: vec![Value::numeric("100.5").unwrap()], label: "0".into() }],
        )
        .unwrap();
        // |100.5 - 100| / 100 = 0.005 <= 0.01: matched, so the row is not new.
        assert_eq!(nrs(&syn, &real, 0.01).unwrap(), 0.0);
        assert_eq!(nrs(&syn, &real, 0.001).unwrap(), 1.0);
    }

    #[test]
    fn nrs_is_monotone_in_tolerance() {
        // Shared schema, disjoint rows: slice one dataset into halves.
        let all = random_dataset(41, 60, 3, 1, 2);
        let real = all.subset(&(0..30).collect::<Vec<_>>());
        let syn = all.subset(&(30..60).collect::<Vec<_>>());
        let values: Vec<f64> = [0.001, 0.01, 0.1, 1.0]
            .iter()
            .map(|&tol| nrs(&syn, &real, tol).unwrap())
            .collect();
        for pair in values.windows(2) {
            assert!(pair[0] >= pair[1]);
        }
        assert!(values[0] > values[3], "wide tolerance should match more rows");
    }

    #[test]
    fn empty_inputs_are_errors() {
        let ds = real();
        let empty = Dataset::new(fixture_schema(), vec![]).unwrap();
        assert!(matches!(dcr(&empty, &ds), Err(MetricError::EmptyInput(_))));
        assert!(matches!(dcr(&ds, &empty), Err(MetricError::EmptyInput(_))));
        assert!(matches!(nrs(&empty, &ds, 0.01), Err(MetricError::EmptyInput(_))));
        let other = random_dataset(1, 5, 1, 1, 2);
        assert!(matches!(dcr(&ds, &other), Err(MetricError::SchemaMismatch)));
    }

    #[test]
    fn uniform_unigram_perplexity_is_vocab_size() {
        let backend = MockBackend::new(MockSpec::uniform_vocabulary(
            (0..16).map(|i| format!("t{i}")),
        ));
        let texts = vec!["t0 t1 t2".to_string(), "t15".to_string()];
        let ppl = perplexity(&texts, &backend).unwrap();
        assert!((ppl - 16.0).abs() < 1e-9);
    }

    #[test]
    fn per_sample_perplexities_average_arithmetically() {
        // Vocabulary {a: 0.5, b: 0.25, c: 0.25}: "a a" has PPL 2 and
        // "b" has PPL 4; the dataset-level value is their mean, 3.
        let spec = MockSpec {
            vocabulary: [("a", 0.5), ("b", 0.25), ("c", 0.25)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            smoothing: 0.0,
            ..MockSpec::default()
        };
        let backend = MockBackend::new(spec);
        let texts = vec!["a a".to_string(), "b".to_string()];
        let ppl = perplexity(&texts, &backend).unwrap();
        assert!((ppl - 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_sample_half_probability_tokens_give_ppl_two() {
        let spec = MockSpec {
            vocabulary: [("a", 0.5), ("b", 0.5)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            smoothing: 0.0,
            ..MockSpec::default()
        };
        let backend = MockBackend::new(spec);
        let ppl = perplexity(&["a b".to_string()], &backend).unwrap();
        assert!((ppl - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dlt_is_zero_on_identical_datasets_and_antisymmetric() {
        let ds = random_dataset(51, 10, 1, 1, 2);
        let other = random_dataset(52, 10, 1, 1, 2);
        let all_texts: Vec<String> = record_texts(&ds)
            .into_iter()
            .chain(record_texts(&other))
            .collect();
        let spec = MockSpec::default().fit_unigram(all_texts.iter().map(String::as_str));
        let backend = MockBackend::new(spec);
        assert_eq!(dlt(&ds, &ds, &backend).unwrap(), 0.0);
        let ab = dlt(&ds, &other, &backend).unwrap();
        let ba = dlt(&other, &ds, &backend).unwrap();
        assert!((ab + ba).abs() < 1e-12);
    }

    #[test]
    fn fitted_generator_prefers_its_training_rows() {
        // A unigram fitted on the train encodings scores train lower in
        // perplexity than differently-distributed synthetic rows.
        let train = random_dataset(61, 25, 2, 2, 2);
        let synthetic = random_dataset(62, 25, 2, 2, 2);
        let spec = MockSpec::default()
            .fit_unigram(record_texts(&train).iter().map(String::as_str));
        let backend = MockBackend::new(spec);
        let value = dlt(&train, &synthetic, &backend).unwrap();
        assert!(value < 0.0, "fitted model must prefer its fitting set, got {value}");
    }
}
