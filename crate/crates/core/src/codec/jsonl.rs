//! Conversation JSONL: `{"id": N, "conversations": [{"from": "human",
//! "value": ...}, {"from": "assistant", "value": ...}]}` — one line per
//! sample, assistant turn present only for fine-tuning samples. The field
//! layout is the interchange contract with external trainers; tests pin
//! it byte-for-byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::InstructionSample;
use crate::table::TableError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub from: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationSample {
    pub id: u64,
    pub conversations: Vec<Turn>,
}

impl From<&InstructionSample> for ConversationSample {
    fn from(sample: &InstructionSample) -> Self {
        let mut conversations = vec![Turn {
            from: "human".to_string(),
            value: sample.input_text.clone(),
        }];
        if let Some(output) = &sample.output_text {
            conversations.push(Turn {
                from: "assistant".to_string(),
                value: output.clone(),
            });
        }
        ConversationSample {
            id: sample.id,
            conversations,
        }
    }
}

impl TryFrom<ConversationSample> for InstructionSample {
    type Error = String;

    fn try_from(sample: ConversationSample) -> Result<Self, String> {
        let mut input_text = None;
        let mut output_text = None;
        for turn in sample.conversations {
            match turn.from.as_str() {
                "human" => input_text = Some(turn.value),
                "assistant" => output_text = Some(turn.value),
                other => return Err(format!("unknown speaker '{other}'")),
            }
        }
        Ok(InstructionSample {
            id: sample.id,
            input_text: input_text.ok_or("sample has no human turn")?,
            output_text,
        })
    }
}

pub fn write_instruction_jsonl(
    samples: &[InstructionSample],
    path: impl AsRef<Path>,
) -> Result<(), TableError> {
    let mut out = String::new();
    for sample in samples {
        let conv = ConversationSample::from(sample);
        out.push_str(&serde_json::to_string(&conv).expect("sample serializes"));
        out.push('\n');
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

pub fn read_instruction_jsonl(path: impl AsRef<Path>) -> Result<Vec<InstructionSample>, TableError> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let conv: ConversationSample = serde_json::from_str(line)
            .map_err(|e| TableError::BadSnapshot(format!("line {}: {e}", lineno + 1)))?;
        let sample = InstructionSample::try_from(conv)
            .map_err(|e| TableError::BadSnapshot(format!("line {}: {e}", lineno + 1)))?;
        samples.push(sample);
    }
    Ok(samples)
}
