//! Record/text codec: JSON-dictionary encoding with feature permutation,
//! instruction rendering, and the tolerant decoder for generated text.
//!
//! Tabular rows cross the model boundary as JSON-object text with every
//! value quoted, e.g. `{"Duration in month": "45", ...}`. Feature order
//! carries no information, so each encoded record is independently
//! shuffled to keep the downstream model from learning positional
//! artifacts.

pub(crate) mod decode;
mod downstream;
mod jsonl;

pub use decode::{count_objects, decode_record, DecodeError};
pub use downstream::{parse_answer, render_downstream_instruction, DownstreamTaskConfig};
pub use jsonl::{read_instruction_jsonl, write_instruction_jsonl, ConversationSample, Turn};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::neighbors::{GroupPurpose, NeighborGroup};
use crate::seeds;
use crate::table::{Dataset, Record, Schema};

/// A record flattened to ordered (name, value-text) pairs, label included.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedRecord {
    pub pairs: Vec<(String, String)>,
    /// Index permutation applied to the canonical pair order.
    pub permutation: Vec<usize>,
}

impl EncodedRecord {
    /// JSON-object text with all values rendered as quoted strings.
    pub fn render(&self) -> String {
        render_pairs(&self.pairs)
    }
}

/// `{"k": "v", ...}` with JSON escaping; shared by the encoder and the
/// mock backend so generated text matches the training format.
pub fn render_pairs(pairs: &[(String, String)]) -> String {
    let mut out = String::from("{");
    for (i, (key, value)) in pairs.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&serde_json::to_string(key).expect("string serializes"));
        out.push_str(": ");
        out.push_str(&serde_json::to_string(value).expect("string serializes"));
    }
    out.push('}');
    out
}

/// One instruction: the prompt text, and the reference answer when the
/// sample is for fine-tuning (prompt-dataset samples have none).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub id: u64,
    pub input_text: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub output_text: Option<String>,
}

/// Instruction template. `task_preamble` accepts the placeholders
/// `{k}`, `{m}`, `{label_name}`, `{label_kind}`, and `{subject}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateConfig {
    pub task_preamble: String,
    /// Ordinal words for "Example one:" ... blocks.
    pub example_labels: Vec<String>,
    pub generation_suffix: String,
    /// Domain description interpolated into the preamble.
    pub subject: String,
}

const ORDINALS: [&str; 20] = [
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
    "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
    "twenty",
];

impl TemplateConfig {
    pub fn with_subject(subject: impl Into<String>) -> Self {
        TemplateConfig {
            task_preamble: "Here are {k} tabular data about {subject}, each containing {m} \
                            columns of features and 1 column of labels, where the '{label_name}' \
                            column is a {label_kind} label. I will transmit the data to you in \
                            JSON format. Please generate an approximate sample based on these \
                            {k} examples."
                .to_string(),
            example_labels: ORDINALS.iter().map(|s| s.to_string()).collect(),
            generation_suffix: "Generate one sample:".to_string(),
            subject: subject.into(),
        }
    }

    fn example_label(&self, index: usize) -> String {
        match self.example_labels.get(index) {
            Some(word) => word.clone(),
            None => (index + 1).to_string(),
        }
    }

    fn preamble(&self, k: usize, schema: &Schema) -> String {
        let label_kind = if schema.classes().len() == 2 {
            "binary classification".to_string()
        } else {
            format!("{}-class classification", schema.classes().len())
        };
        self.task_preamble
            .replace("{k}", &k.to_string())
            .replace("{m}", &schema.feature_count().to_string())
            .replace("{label_name}", &schema.label.name)
            .replace("{label_kind}", &label_kind)
            .replace("{subject}", &self.subject)
    }
}

impl Default for TemplateConfig {
    fn default() -> Self {
        TemplateConfig::with_subject("records")
    }
}

/// Encodes a record as ordered (name, value) pairs including the label.
/// With `permute` the pair order is a uniform random permutation under
/// `seed`; otherwise it is the canonical schema order.
pub fn encode_record(record: &Record, schema: &Schema, seed: u64, permute: bool) -> EncodedRecord {
    let mut pairs: Vec<(String, String)> = schema
        .features
        .iter()
        .zip(&record.values)
        .map(|(spec, value)| (spec.name.clone(), value.as_text().to_string()))
        .collect();
    pairs.push((schema.label.name.clone(), record.label.clone()));

    let mut permutation: Vec<usize> = (0..pairs.len()).collect();
    if permute {
        permutation.shuffle(&mut seeds::rng(seed));
    }
    let pairs = permutation.iter().map(|&i| pairs[i].clone()).collect();
    EncodedRecord { pairs, permutation }
}

/// Renders one instruction from a neighbor group: the preamble, the k
/// encoded example blocks (each independently permuted under seeds
/// derived from `seed`), and the generation suffix. Finetune groups get
/// the encoded target as the reference answer; prompt groups get none.
pub fn render_generator_instruction(
    group: &NeighborGroup,
    dataset: &Dataset,
    template: &TemplateConfig,
    id: u64,
    seed: u64,
    permute: bool,
) -> InstructionSample {
    let schema = &dataset.schema;
    let k = group.neighbor_indices.len();
    let mut input = template.preamble(k, schema);
    for (slot, &index) in group.neighbor_indices.iter().enumerate() {
        let encoded = encode_record(
            &dataset.records[index],
            schema,
            seeds::derive(seed, "example", slot as u64),
            permute,
        );
        input.push_str("\n Example ");
        input.push_str(&template.example_label(slot));
        input.push_str(": ");
        input.push_str(&encoded.render());
        input.push('.');
    }
    input.push_str("\n ");
    input.push_str(&template.generation_suffix);

    let output_text = group.target_index.map(|target| {
        let encoded = encode_record(
            &dataset.records[target],
            schema,
            seeds::derive(seed, "target", 0),
            permute,
        );
        format!("{}.", encoded.render())
    });

    InstructionSample {
        id,
        input_text: input,
        output_text,
    }
}

/// Purpose implied by a sample: finetune samples carry an answer.
pub fn sample_purpose(sample: &InstructionSample) -> GroupPurpose {
    if sample.output_text.is_some() {
        GroupPurpose::Finetune
    } else {
        GroupPurpose::Prompt
    }
}
