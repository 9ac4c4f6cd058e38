//! Downstream-task instruction rendering and answer parsing.
//!
//! A record becomes a classification question: the task question, a
//! verbalized "The state of X is Y" list of its features, and an answer
//! cue. The label is verbalized through a configured token table (for
//! example `0` -> `good`).

use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::InstructionSample;
use crate::table::{Record, Schema};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamTaskConfig {
    /// Task question, e.g. "Evaluate the creditworthiness of a customer
    /// with the following financial profile."
    pub question: String,
    /// Ordered class -> answer-token table.
    pub answer_tokens: IndexMap<String, String>,
    /// Optional per-feature value verbalizations (code books).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub value_phrases: BTreeMap<String, BTreeMap<String, String>>,
}

impl DownstreamTaskConfig {
    pub fn new(question: impl Into<String>, answer_tokens: IndexMap<String, String>) -> Self {
        DownstreamTaskConfig {
            question: question.into(),
            answer_tokens,
            value_phrases: BTreeMap::new(),
        }
    }

    /// "either 'good' or 'bad'" for two classes, "one of 'a', 'b' or 'c'"
    /// beyond that.
    fn options_phrase(&self) -> String {
        let tokens: Vec<String> = self
            .answer_tokens
            .values()
            .map(|t| format!("'{t}'"))
            .collect();
        match tokens.len() {
            0 | 1 => tokens.concat(),
            2 => format!("either {} or {}", tokens[0], tokens[1]),
            n => format!("one of {} or {}", tokens[..n - 1].join(", "), tokens[n - 1]),
        }
    }

    fn token_for(&self, class: &str) -> Option<&str> {
        self.answer_tokens.get(class).map(String::as_str)
    }

    fn phrase_for<'a>(&'a self, feature: &str, value: &'a str) -> &'a str {
        self.value_phrases
            .get(feature)
            .and_then(|m| m.get(value))
            .map(String::as_str)
            .unwrap_or(value)
    }
}

/// Renders one test record as a downstream classification instruction.
/// The answer (when the record's label is mapped) is the quoted token.
pub fn render_downstream_instruction(
    record: &Record,
    schema: &Schema,
    task: &DownstreamTaskConfig,
    id: u64,
) -> Result<InstructionSample, String> {
    let states: Vec<String> = schema
        .features
        .iter()
        .zip(&record.values)
        .map(|(spec, value)| {
            format!(
                "The state of {} is {}",
                spec.name,
                task.phrase_for(&spec.name, value.as_text())
            )
        })
        .collect();
    let input_text = format!(
        "{} Respond with only {}. \n Text: '{}.'\n Answer:",
        task.question,
        task.options_phrase(),
        states.join(", ")
    );
    let token = task
        .token_for(&record.label)
        .ok_or_else(|| format!("no answer token configured for label '{}'", record.label))?;
    Ok(InstructionSample {
        id,
        input_text,
        output_text: Some(format!("\"{token}\"")),
    })
}

/// Parses a model answer by case-insensitive longest-token match: the
/// earliest matching answer token wins; at equal positions the longer
/// token wins. Returns the class (not the token). `None` = unparseable.
pub fn parse_answer(text: &str, task: &DownstreamTaskConfig) -> Option<String> {
    let haystack = text.to_lowercase();
    let mut best: Option<(usize, usize, &String)> = None; // (pos, len, class)
    for (class, token) in &task.answer_tokens {
        let needle = token.to_lowercase();
        if needle.is_empty() {
            continue;
        }
        if let Some(pos) = haystack.find(&needle) {
            let better = match best {
                None => true,
                Some((bp, bl, _)) => pos < bp || (pos == bp && needle.len() > bl),
            };
            if better {
                best = Some((pos, needle.len(), class));
            }
        }
    }
    best.map(|(_, _, class)| class.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{FeatureSpec, Value};

    fn task() -> DownstreamTaskConfig {
        DownstreamTaskConfig::new(
            "Evaluate the creditworthiness of a customer with the following financial profile.",
            IndexMap::from([("0".to_string(), "good".to_string()), ("1".to_string(), "bad".to_string())]),
        )
    }

    fn schema() -> Schema {
        Schema::new(
            vec![
                FeatureSpec::numerical("Duration in month", 0.0, 72.0),
                FeatureSpec::categorical("Housing", ["A151", "A152"]),
            ],
            FeatureSpec::categorical("status", ["0", "1"]),
        )
    }

    fn record(label: &str) -> Record {
        Record {
            values: vec![
                Value::numeric("36").unwrap(),
                Value::Categorical("A151".into()),
            ],
            label: label.into(),
        }
    }

    #[test]
    fn renders_question_states_and_answer_cue() {
        let sample = render_downstream_instruction(&record("1"), &schema(), &task(), 0).unwrap();
        assert!(sample
            .input_text
            .contains("Respond with only either 'good' or 'bad'."));
        assert!(sample.input_text.contains("The state of Duration in month is 36"));
        assert!(sample.input_text.contains("The state of Housing is A151"));
        assert!(sample.input_text.ends_with("Answer:"));
        assert_eq!(sample.output_text.as_deref(), Some("\"bad\""));
    }

    #[test]
    fn value_phrases_substitute_code_values() {
        let mut t = task();
        t.value_phrases.insert(
            "Housing".into(),
            BTreeMap::from([("A151".to_string(), "for free".to_string())]),
        );
        let sample = render_downstream_instruction(&record("0"), &schema(), &t, 0).unwrap();
        assert!(sample.input_text.contains("The state of Housing is for free"));
    }

    #[test]
    fn label_mapping_round_trips() {
        let sample = render_downstream_instruction(&record("0"), &schema(), &task(), 0).unwrap();
        let parsed = parse_answer(sample.output_text.as_deref().unwrap(), &task());
        assert_eq!(parsed.as_deref(), Some("0"));
    }

    #[test]
    fn records_differing_only_in_label_share_input() {
        let a = render_downstream_instruction(&record("0"), &schema(), &task(), 0).unwrap();
        let b = render_downstream_instruction(&record("1"), &schema(), &task(), 0).unwrap();
        assert_eq!(a.input_text, b.input_text);
        assert_ne!(a.output_text, b.output_text);
    }

    #[test]
    fn unmapped_label_is_an_error() {
        let mut r = record("0");
        r.label = "2".into();
        assert!(render_downstream_instruction(&r, &schema(), &task(), 0).is_err());
    }

    #[test]
    fn answer_parsing_tolerates_punctuation_and_case() {
        let t = task();
        assert_eq!(parse_answer("bad.", &t).as_deref(), Some("1"));
        assert_eq!(parse_answer("  GOOD!", &t).as_deref(), Some("0"));
        assert_eq!(parse_answer("\"bad\"", &t).as_deref(), Some("1"));
        assert_eq!(parse_answer("no idea", &t), None);
    }

    #[test]
    fn longest_match_wins_at_equal_positions() {
        let t = DownstreamTaskConfig::new(
            "q",
            IndexMap::from([("0".to_string(), "cat".to_string()), ("1".to_string(), "category".to_string())]),
        );
        assert_eq!(parse_answer("category", &t).as_deref(), Some("1"));
        assert_eq!(parse_answer("cat", &t).as_deref(), Some("0"));
    }

    #[test]
    fn earliest_match_wins() {
        let t = task();
        assert_eq!(parse_answer("bad, not good", &t).as_deref(), Some("1"));
    }

    #[test]
    fn multiclass_options_phrase() {
        let t = DownstreamTaskConfig::new(
            "q",
            IndexMap::from([
                ("0".to_string(), "cats".to_string()),
                ("1".to_string(), "dogs".to_string()),
                ("2".to_string(), "birds".to_string()),
            ]),
        );
        assert_eq!(t.options_phrase(), "one of 'cats', 'dogs' or 'birds'");
    }
}
