//! Utility evaluation: weighted-F1 scoring, machine-learning efficacy
//! with in-repo classifiers (train on synthetic, test on real), and the
//! LLM-efficacy harness that prepares downstream instruction data and
//! scores a model's answers on the real test set.

mod linear;
mod tree;

pub use linear::LogisticRegression;
pub use tree::DecisionTree;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{generate_batch, BackendConfig, BackendError, GenerationRequest};
use crate::codec::{parse_answer, render_downstream_instruction, DownstreamTaskConfig, InstructionSample};
use crate::table::{Dataset, FeatureKind, Schema};

#[derive(Debug, Error)]
pub enum EfficacyError {
    #[error("no predictions to score")]
    EmptyPredictions,
    #[error("gold label '{0}' is not among the configured classes")]
    UnknownGoldLabel(String),
    #[error("training labels contain a single class '{0}'")]
    DegenerateTraining(String),
    #[error("synthetic and real schemas differ")]
    SchemaMismatch,
    #[error("test split is empty")]
    EmptyTestSplit,
    #[error("downstream task error: {0}")]
    Task(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// One scored test row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub row: usize,
    pub gold: String,
    pub raw_text: String,
    /// Parsed class; `None` marks an unparseable answer, which counts as
    /// wrong for every class.
    pub parsed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacyReport {
    pub evaluator: String,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub seed: u64,
}

/// Support-weighted mean F1 over the confusion matrix of the predictions.
/// Precision/recall with an empty denominator count as 0.
pub fn weighted_f1(
    predictions: &[PredictionRecord],
    classes: &IndexSet<String>,
    evaluator: impl Into<String>,
    seed: u64,
) -> Result<EfficacyReport, EfficacyError> {
    if predictions.is_empty() {
        return Err(EfficacyError::EmptyPredictions);
    }
    for p in predictions {
        if !classes.contains(p.gold.as_str()) {
            return Err(EfficacyError::UnknownGoldLabel(p.gold.clone()));
        }
    }

    let index_of = |label: &str| classes.get_index_of(label);
    let c = classes.len();
    // Square confusion matrix plus one "unparseable" prediction column.
    let mut matrix = vec![vec![0usize; c + 1]; c];
    for p in predictions {
        let gold = index_of(&p.gold).expect("validated above");
        let pred = p
            .parsed
            .as_deref()
            .and_then(index_of)
            .unwrap_or(c);
        matrix[gold][pred] += 1;
    }

    let mut per_class = Vec::with_capacity(c);
    let total: usize = predictions.len();
    let mut weighted = 0.0;
    for (ci, class) in classes.iter().enumerate() {
        let tp = matrix[ci][ci];
        let fn_ = matrix[ci].iter().sum::<usize>() - tp;
        let fp = (0..c).filter(|&g| g != ci).map(|g| matrix[g][ci]).sum::<usize>();
        let support = tp + fn_;
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
        let f1 = if 2 * tp + fp + fn_ == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        };
        weighted += f1 * support as f64 / total as f64;
        per_class.push(ClassMetrics {
            class: class.clone(),
            precision,
            recall,
            f1,
            support,
        });
    }

    Ok(EfficacyReport {
        evaluator: evaluator.into(),
        weighted_f1: weighted,
        per_class,
        seed,
    })
}

/// A trained in-repo classifier.
pub trait TabularClassifier {
    fn predict(&self, features: &[f64]) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    LogisticRegression,
    DecisionTree,
}

impl ClassifierKind {
    pub fn name(&self) -> &'static str {
        match self {
            ClassifierKind::LogisticRegression => "logistic_regression",
            ClassifierKind::DecisionTree => "decision_tree",
        }
    }
}

/// Encodes records for the classifiers: min-max-scaled numerics (schema
/// ranges) and one-hot categoricals.
pub(crate) struct FeatureEncoder {
    schema: Schema,
    pub width: usize,
}

impl FeatureEncoder {
    pub fn new(schema: &Schema) -> Self {
        let width = schema
            .features
            .iter()
            .map(|f| match f.kind {
                FeatureKind::Numerical => 1,
                FeatureKind::Categorical => f.categories.as_ref().map_or(0, |c| c.len()),
            })
            .sum();
        FeatureEncoder {
            schema: schema.clone(),
            width,
        }
    }

    pub fn encode(&self, record: &crate::table::Record) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width);
        for (spec, value) in self.schema.features.iter().zip(&record.values) {
            match spec.kind {
                FeatureKind::Numerical => {
                    let (min, _) = spec.range.unwrap_or((0.0, 0.0));
                    let width = spec.range_width();
                    let v = value.as_number().expect("numeric");
                    out.push(if width == 0.0 { 0.0 } else { (v - min) / width });
                }
                FeatureKind::Categorical => {
                    let categories = spec.categories.as_ref().expect("categorical");
                    let hit = categories.get_index_of(value.as_text());
                    for i in 0..categories.len() {
                        out.push(if hit == Some(i) { 1.0 } else { 0.0 });
                    }
                }
            }
        }
        out
    }
}

fn class_indices(dataset: &Dataset) -> Vec<usize> {
    let classes = dataset.schema.classes();
    dataset
        .records
        .iter()
        .map(|r| classes.get_index_of(r.label.as_str()).expect("valid label"))
        .collect()
}

/// Machine-learning efficacy: trains each classifier on the (synthetic)
/// training set and scores weighted F1 on the real test set.
pub fn mle(
    train_syn: &Dataset,
    test_real: &Dataset,
    classifiers: &[ClassifierKind],
    seed: u64,
) -> Result<Vec<EfficacyReport>, EfficacyError> {
    if train_syn.schema != test_real.schema {
        return Err(EfficacyError::SchemaMismatch);
    }
    if test_real.is_empty() {
        return Err(EfficacyError::EmptyTestSplit);
    }
    if train_syn.is_empty() {
        return Err(EfficacyError::EmptyPredictions);
    }
    let first_label = &train_syn.records[0].label;
    if train_syn.records.iter().all(|r| r.label == *first_label) {
        return Err(EfficacyError::DegenerateTraining(first_label.clone()));
    }

    let encoder = FeatureEncoder::new(&train_syn.schema);
    let train_x: Vec<Vec<f64>> = train_syn.records.iter().map(|r| encoder.encode(r)).collect();
    let train_y = class_indices(train_syn);
    let test_x: Vec<Vec<f64>> = test_real.records.iter().map(|r| encoder.encode(r)).collect();
    let classes = train_syn.schema.classes().clone();

    let mut reports = Vec::new();
    for kind in classifiers {
        let model: Box<dyn TabularClassifier> = match kind {
            ClassifierKind::LogisticRegression => Box::new(LogisticRegression::fit(
                &train_x,
                &train_y,
                classes.len(),
                seed,
            )),
            ClassifierKind::DecisionTree => {
                Box::new(DecisionTree::fit(&train_x, &train_y, classes.len(), 8))
            }
        };
        let predictions: Vec<PredictionRecord> = test_real
            .records
            .iter()
            .zip(&test_x)
            .enumerate()
            .map(|(row, (record, x))| {
                let predicted = classes[model.predict(x)].clone();
                PredictionRecord {
                    row,
                    gold: record.label.clone(),
                    raw_text: predicted.clone(),
                    parsed: Some(predicted),
                }
            })
            .collect();
        reports.push(weighted_f1(&predictions, &classes, kind.name(), seed)?);
    }
    Ok(reports)
}

/// Renders every record as a downstream instruction sample, ready to be
/// written as conversation JSONL for an external fine-tuning run.
pub fn lle_prepare(
    dataset: &Dataset,
    task: &DownstreamTaskConfig,
) -> Result<Vec<InstructionSample>, EfficacyError> {
    dataset
        .records
        .iter()
        .enumerate()
        .map(|(i, record)| {
            render_downstream_instruction(record, &dataset.schema, task, i as u64)
                .map_err(EfficacyError::Task)
        })
        .collect()
}

/// Scores a (fine-tuned or mock) model on the real test set: renders each
/// row's question, generates greedily, parses the answer token, and
/// computes weighted F1. Backend failures mark the row unparseable and
/// the run continues.
pub fn lle_score(
    test_real: &Dataset,
    task: &DownstreamTaskConfig,
    backend_config: &BackendConfig,
    seed: u64,
) -> Result<(EfficacyReport, Vec<PredictionRecord>), EfficacyError> {
    if test_real.is_empty() {
        return Err(EfficacyError::EmptyTestSplit);
    }
    let backend = backend_config.build()?;
    let requests: Vec<GenerationRequest> = test_real
        .records
        .iter()
        .enumerate()
        .map(|(i, record)| {
            let sample = render_downstream_instruction(record, &test_real.schema, task, i as u64)
                .map_err(EfficacyError::Task)?;
            Ok(GenerationRequest {
                prompt: sample.input_text,
                // Greedy decoding keeps evaluation deterministic.
                temperature: 0.0,
                max_new_tokens: 16,
                stop_sequences: vec!["\n".to_string()],
                seed: Some(seed),
            })
        })
        .collect::<Result<_, EfficacyError>>()?;

    let outcomes = generate_batch(backend.as_ref(), &requests, backend_config.max_in_flight);
    let predictions: Vec<PredictionRecord> = outcomes
        .into_iter()
        .enumerate()
        .map(|(row, outcome)| {
            let (raw_text, parsed) = match outcome {
                Ok(text) => {
                    let parsed = parse_answer(&text, task);
                    (text, parsed)
                }
                Err(e) => {
                    log::warn!("row {row}: generation failed: {e}");
                    (format!("<backend error: {e}>"), None)
                }
            };
            PredictionRecord {
                row,
                gold: test_real.records[row].label.clone(),
                raw_text,
                parsed,
            }
        })
        .collect();

    let report = weighted_f1(
        &predictions,
        test_real.schema.classes(),
        "llm_downstream",
        seed,
    )?;
    Ok((report, predictions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use indexmap::IndexMap;
    use crate::backend::{EmissionPolicy, MockSpec};
    use crate::fixtures::random_dataset;
    use crate::table::{FeatureSpec, Record, Value};

    fn classes2() -> IndexSet<String> {
        ["0", "1"].iter().map(|s| s.to_string()).collect()
    }

    fn prediction(gold: &str, parsed: Option<&str>) -> PredictionRecord {
        PredictionRecord {
            row: 0,
            gold: gold.into(),
            raw_text: parsed.unwrap_or("???").into(),
            parsed: parsed.map(str::to_string),
        }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let preds: Vec<PredictionRecord> = (0..10)
            .map(|i| prediction(if i < 4 { "1" } else { "0" }, Some(if i < 4 { "1" } else { "0" })))
            .collect();
        let report = weighted_f1(&preds, &classes2(), "t", 0).unwrap();
        assert_eq!(report.weighted_f1, 1.0);
    }

    #[test]
    fn hand_confusion_matrix_case() {
        // Class "1": TP=3 FP=1 FN=1; class "0": TN=5. Supports 4 and 6.
        let mut preds = Vec::new();
        for _ in 0..3 {
            preds.push(prediction("1", Some("1"))); // TP
        }
        preds.push(prediction("1", Some("0"))); // FN for "1"
        preds.push(prediction("0", Some("1"))); // FP for "1"
        for _ in 0..5 {
            preds.push(prediction("0", Some("0"))); // TN
        }
        let report = weighted_f1(&preds, &classes2(), "t", 0).unwrap();
        // (4 * 0.75 + 6 * 5/6) / 10 = 0.8
        assert!((report.weighted_f1 - 0.8).abs() < 1e-12);
        let c1 = report.per_class.iter().find(|c| c.class == "1").unwrap();
        assert!((c1.f1 - 0.75).abs() < 1e-12);
        assert_eq!(c1.support, 4);
    }

    #[test]
    fn all_unparseable_scores_zero() {
        let preds: Vec<PredictionRecord> =
            (0..6).map(|i| prediction(if i % 2 == 0 { "0" } else { "1" }, None)).collect();
        let report = weighted_f1(&preds, &classes2(), "t", 0).unwrap();
        assert_eq!(report.weighted_f1, 0.0);
    }

    #[test]
    fn empty_predictions_is_an_error() {
        assert!(matches!(
            weighted_f1(&[], &classes2(), "t", 0),
            Err(EfficacyError::EmptyPredictions)
        ));
    }

    #[test]
    fn unknown_gold_label_is_an_error() {
        let preds = vec![prediction("7", Some("0"))];
        assert!(matches!(
            weighted_f1(&preds, &classes2(), "t", 0),
            Err(EfficacyError::UnknownGoldLabel(_))
        ));
    }

    fn separable_dataset(n: usize) -> Dataset {
        // One numeric feature cleanly separates the two classes.
        let schema = Schema::new(
            vec![
                FeatureSpec::numerical("x", 0.0, 10.0),
                FeatureSpec::categorical("c", ["p", "q"]),
            ],
            FeatureSpec::categorical("y", ["0", "1"]),
        );
        let records = (0..n)
            .map(|i| {
                let low = i % 2 == 0;
                let x = if low { 1.0 + (i % 5) as f64 * 0.2 } else { 8.0 + (i % 5) as f64 * 0.2 };
                Record {
                    values: vec![
                        Value::numeric(format!("{x}")).unwrap(),
                        Value::Categorical(if i % 3 == 0 { "p" } else { "q" }.into()),
                    ],
                    label: if low { "0" } else { "1" }.into(),
                }
            })
            .collect();
        Dataset::new(schema, records).unwrap()
    }

    #[test]
    fn classifiers_learn_a_separable_blob() {
        let train = separable_dataset(60);
        let test = separable_dataset(30);
        let reports = mle(
            &train,
            &test,
            &[ClassifierKind::LogisticRegression, ClassifierKind::DecisionTree],
            7,
        )
        .unwrap();
        for report in &reports {
            assert!(
                report.weighted_f1 >= 0.95,
                "{} scored {}",
                report.evaluator,
                report.weighted_f1
            );
        }
    }

    #[test]
    fn single_class_training_is_an_error() {
        let mut train = separable_dataset(20);
        for r in &mut train.records {
            r.label = "0".into();
        }
        let train = Dataset::new(train.schema.clone(), train.records).unwrap();
        let test = separable_dataset(10);
        assert!(matches!(
            mle(&train, &test, &[ClassifierKind::LogisticRegression], 7),
            Err(EfficacyError::DegenerateTraining(_))
        ));
    }

    #[test]
    fn constant_features_fall_back_to_majority_class() {
        let schema = Schema::new(
            vec![FeatureSpec::numerical("x", 5.0, 5.0)],
            FeatureSpec::categorical("y", ["0", "1"]),
        );
        let mk = |label: &str| Record {
            values: vec![Value::numeric("5").unwrap()],
            label: label.into(),
        };
        let train = Dataset::new(
            schema.clone(),
            vec![mk("0"), mk("0"), mk("0"), mk("1"), mk("1")],
        )
        .unwrap();
        let test = Dataset::new(schema, vec![mk("0"), mk("0"), mk("1"), mk("1")]).unwrap();
        let reports = mle(&train, &test, &[ClassifierKind::DecisionTree], 7).unwrap();
        // Majority class "0" on a 2/2 test: class 0 gets F1 2/3, class 1 gets 0.
        assert!((reports[0].weighted_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mle_is_deterministic_under_seed() {
        let train = random_dataset(71, 80, 2, 2, 2);
        let test = random_dataset(71, 80, 2, 2, 2).subset(&(0..20).collect::<Vec<_>>());
        let kinds = [ClassifierKind::LogisticRegression, ClassifierKind::DecisionTree];
        let a = mle(&train, &test, &kinds, 5).unwrap();
        let b = mle(&train, &test, &kinds, 5).unwrap();
        assert_eq!(a, b);
    }

    fn task() -> DownstreamTaskConfig {
        DownstreamTaskConfig::new(
            "Classify the row.",
            IndexMap::from([("0".to_string(), "good".to_string()), ("1".to_string(), "bad".to_string())]),
        )
    }

    #[test]
    fn lle_prepare_renders_every_record() {
        let ds = random_dataset(81, 12, 2, 1, 2);
        let samples = lle_prepare(&ds, &task()).unwrap();
        assert_eq!(samples.len(), 12);
        assert!(samples.iter().all(|s| s.output_text.is_some()));
    }

    #[test]
    fn constant_answer_backend_scores_like_a_constant_classifier() {
        // Balanced binary test set and a backend that always answers
        // "good" (class 0): class 0 gets F1 2/3, class 1 gets 0, so the
        // weighted F1 is 1/3.
        let ds = separable_dataset(20);
        let mut config = BackendConfig::default();
        config.mock = MockSpec {
            emission: EmissionPolicy::FixedText {
                text: "\"good\"".into(),
            },
            ..MockSpec::default()
        };
        let (report, predictions) = lle_score(&ds, &task(), &config, 1).unwrap();
        assert_eq!(predictions.len(), 20);
        assert!((report.weighted_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn trailing_punctuation_is_tolerated_in_answers() {
        let ds = separable_dataset(4);
        let mut config = BackendConfig::default();
        config.mock = MockSpec {
            emission: EmissionPolicy::FixedText { text: "bad.".into() },
            ..MockSpec::default()
        };
        let (_, predictions) = lle_score(&ds, &task(), &config, 1).unwrap();
        assert!(predictions.iter().all(|p| p.parsed.as_deref() == Some("1")));
    }
}
