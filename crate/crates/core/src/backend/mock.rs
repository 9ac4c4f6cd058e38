//! Deterministic mock backend.
//!
//! Generation is a pure function of (prompt, seed): the mock parses the
//! example records out of the prompt and resamples each feature from the
//! observed values — a weighted pick for categorical-looking values, a
//! pick plus bounded jitter for numeric ones — at temperature-scaled
//! randomness. Scoring uses an additive-smoothed unigram model over
//! whitespace tokens, so perplexities are analytically checkable. The
//! mock stands in for a fine-tuned generator in tests and offline runs.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::{BackendError, GenerationBackend, GenerationRequest, ScoredText};
use crate::codec::render_pairs;
use crate::seeds;

/// How the mock shapes its generated text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum EmissionPolicy {
    /// Resampled record; a `flaw_rate` fraction of outputs is deliberately
    /// malformed and a `chatty_rate` fraction is wrapped in prose.
    Standard { flaw_rate: f64, chatty_rate: f64 },
    /// Returns the first example of the prompt verbatim (re-rendered).
    EchoFirstExample,
    /// Always returns the same text.
    FixedText { text: String },
}

impl Default for EmissionPolicy {
    fn default() -> Self {
        EmissionPolicy::Standard {
            flaw_rate: 0.02,
            chatty_rate: 0.25,
        }
    }
}

/// Mock configuration: scoring vocabulary and emission behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockSpec {
    /// Unigram weights for scoring. Empty means scoring is unsupported
    /// until a vocabulary is fitted.
    #[serde(default)]
    pub vocabulary: BTreeMap<String, f64>,
    /// Additive smoothing mass; 0 makes unseen tokens an error.
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    #[serde(default)]
    pub emission: EmissionPolicy,
}

fn default_smoothing() -> f64 {
    0.5
}

impl Default for MockSpec {
    fn default() -> Self {
        MockSpec {
            vocabulary: BTreeMap::new(),
            smoothing: default_smoothing(),
            emission: EmissionPolicy::default(),
        }
    }
}

impl MockSpec {
    /// Uniform vocabulary over the given tokens with no smoothing:
    /// every known token scores exactly -ln(V).
    pub fn uniform_vocabulary<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        MockSpec {
            vocabulary: tokens.into_iter().map(|t| (t.into(), 1.0)).collect(),
            smoothing: 0.0,
            emission: EmissionPolicy::default(),
        }
    }

    /// Fits unigram weights on whitespace tokens of the given texts,
    /// mirroring a generator whose likelihood is shaped by its training
    /// corpus.
    pub fn fit_unigram<'a, I>(mut self, texts: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<String, f64> = BTreeMap::new();
        for text in texts {
            for token in text.split_whitespace() {
                *counts.entry(token.to_string()).or_insert(0.0) += 1.0;
            }
        }
        self.vocabulary = counts;
        self
    }
}

pub struct MockBackend {
    spec: MockSpec,
}

impl MockBackend {
    pub fn new(spec: MockSpec) -> Self {
        MockBackend { spec }
    }

    fn rng_for(&self, request: &GenerationRequest) -> ChaCha12Rng {
        let digest = seeds::text_digest(&request.prompt);
        seeds::rng(seeds::derive(
            digest,
            "mock-generate",
            request.seed.unwrap_or(0),
        ))
    }

    /// Resamples one record from the example records found in the prompt.
    fn resample(
        &self,
        examples: &[Vec<(String, String)>],
        temperature: f64,
        rng: &mut ChaCha12Rng,
    ) -> Vec<(String, String)> {
        // Keys in first-example order; values pooled across examples.
        let mut keys: Vec<&String> = Vec::new();
        let mut pools: BTreeMap<&String, Vec<&String>> = BTreeMap::new();
        for example in examples {
            for (key, value) in example {
                let pool = pools.entry(key).or_insert_with(|| {
                    keys.push(key);
                    Vec::new()
                });
                pool.push(value);
            }
        }

        let mut pairs = Vec::with_capacity(keys.len());
        for key in keys {
            let pool = &pools[key];
            let numbers: Option<Vec<f64>> = pool
                .iter()
                .map(|v| v.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect();
            let value = match numbers {
                Some(numbers) if !numbers.is_empty() => {
                    sample_numeric(&numbers, temperature, rng)
                }
                _ => sample_categorical(pool, temperature, rng),
            };
            pairs.push((key.clone(), value));
        }

        // The generator saw shuffled features; emit in a shuffled order
        // too. Greedy decoding is fully deterministic, order included.
        if temperature > 0.0 {
            use rand::seq::SliceRandom;
            pairs.shuffle(rng);
        }
        pairs
    }

    fn emit(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let mut rng = self.rng_for(request);

        let text = match &self.spec.emission {
            EmissionPolicy::FixedText { text } => text.clone(),
            EmissionPolicy::EchoFirstExample => {
                let examples = prompt_examples(&request.prompt);
                match examples.first() {
                    Some(example) => format!("{}.", render_pairs(example)),
                    None => "I see no examples.".to_string(),
                }
            }
            EmissionPolicy::Standard {
                flaw_rate,
                chatty_rate,
            } => {
                if let Some(answer) = answer_prompt(&request.prompt, request.temperature, &mut rng)
                {
                    answer
                } else {
                    let examples = prompt_examples(&request.prompt);
                    if examples.is_empty() {
                        "I cannot find any examples in this prompt.".to_string()
                    } else {
                        let pairs = self.resample(&examples, request.temperature, &mut rng);
                        let body = render_pairs(&pairs);
                        if request.temperature == 0.0 {
                            format!("{body}.")
                        } else if rng.gen_bool(flaw_rate.clamp(0.0, 1.0)) {
                            // Deliberately malformed output: either cut the
                            // record short or refuse entirely.
                            if rng.gen_bool(0.5) {
                                let cut = body.len() / 2;
                                format!("{}...", &body[..cut])
                            } else {
                                "Sorry, I cannot generate a sample.".to_string()
                            }
                        } else if rng.gen_bool(chatty_rate.clamp(0.0, 1.0)) {
                            format!("Here is a new sample: {body}.")
                        } else {
                            format!("{body}.")
                        }
                    }
                }
            }
        };

        // Stop sequences cut the emission; the budget caps its length
        // (roughly four characters per token).
        let mut text = text;
        for stop in &request.stop_sequences {
            if stop.is_empty() {
                continue;
            }
            if let Some(pos) = text.find(stop.as_str()) {
                text.truncate(pos);
            }
        }
        let budget = request.max_new_tokens.saturating_mul(4);
        if text.len() > budget {
            let mut cut = budget;
            while cut > 0 && !text.is_char_boundary(cut) {
                cut -= 1;
            }
            text.truncate(cut);
        }
        Ok(text)
    }
}

fn sample_numeric(numbers: &[f64], temperature: f64, rng: &mut ChaCha12Rng) -> String {
    let min = numbers.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = numbers.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let base = if temperature == 0.0 {
        numbers[0]
    } else {
        numbers[rng.gen_range(0..numbers.len())]
    };
    let width = max - min;
    let jitter = if temperature == 0.0 || width == 0.0 {
        0.0
    } else {
        rng.gen_range(-0.5..0.5) * width * 0.2 * temperature
    };
    let value = (base + jitter).clamp(min, max);
    let integral = numbers.iter().all(|n| n.fract() == 0.0);
    if integral {
        format!("{}", value.round() as i64)
    } else {
        format!("{:.2}", value)
    }
}

fn sample_categorical(pool: &[&String], temperature: f64, rng: &mut ChaCha12Rng) -> String {
    let mut counts: BTreeMap<&str, f64> = BTreeMap::new();
    for value in pool {
        *counts.entry(value.as_str()).or_insert(0.0) += 1.0;
    }
    let entries: Vec<(&str, f64)> = counts.into_iter().collect();
    if temperature == 0.0 {
        // Greedy: the most frequent value, first-seen on ties.
        let best = entries
            .iter()
            .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite counts"))
            .expect("non-empty pool");
        return best.0.to_string();
    }
    let weights: Vec<f64> = entries
        .iter()
        .map(|(_, c)| c.powf(1.0 / temperature))
        .collect();
    let index = WeightedIndex::new(&weights)
        .map(|d| d.sample(rng))
        .unwrap_or(0);
    entries[index].0.to_string()
}

/// Pulls every `{...}` region of the prompt into key/value pairs.
fn prompt_examples(prompt: &str) -> Vec<Vec<(String, String)>> {
    let mut examples = Vec::new();
    let mut rest = prompt;
    while let Some(start) = rest.find('{') {
        let region = &rest[start..];
        let end = region.find('}').map(|e| e + 1).unwrap_or(region.len());
        if let Some(pairs) = crate::codec::decode::extract_pairs(&region[..end]) {
            if !pairs.is_empty() {
                examples.push(pairs);
            }
        }
        rest = &region[end..];
    }
    examples
}

/// Handles downstream classification prompts: picks one of the quoted
/// answer options. Greedy takes the first option; positive temperatures
/// sample uniformly.
fn answer_prompt(prompt: &str, temperature: f64, rng: &mut ChaCha12Rng) -> Option<String> {
    let marker = "Respond with only ";
    let pos = prompt.find(marker)?;
    let tail = &prompt[pos + marker.len()..];
    let stop = tail.find('\n').unwrap_or(tail.len());
    let options_text = &tail[..stop];
    let mut options = Vec::new();
    let mut chars = options_text.char_indices();
    while let Some((start, c)) = chars.next() {
        if c == '\'' {
            if let Some(len) = options_text[start + 1..].find('\'') {
                options.push(&options_text[start + 1..start + 1 + len]);
                for _ in 0..=len {
                    chars.next();
                }
            }
        }
    }
    if options.is_empty() {
        return None;
    }
    let pick = if temperature == 0.0 {
        options[0]
    } else {
        options[rng.gen_range(0..options.len())]
    };
    Some(format!("\"{pick}\""))
}

impl GenerationBackend for MockBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        request.validate()?;
        self.emit(request)
    }

    fn score(&self, text: &str) -> Result<ScoredText, BackendError> {
        if text.is_empty() {
            return Err(BackendError::EmptyTokenization);
        }
        if self.spec.vocabulary.is_empty() {
            return Err(BackendError::ScoringUnsupported(
                "mock has no vocabulary; fit or configure one".into(),
            ));
        }
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(BackendError::EmptyTokenization);
        }
        let alpha = self.spec.smoothing;
        let vocab_size = self.spec.vocabulary.len() as f64;
        let total: f64 = self.spec.vocabulary.values().sum();
        // One extra type absorbs out-of-vocabulary tokens when smoothing.
        let denom = total + alpha * (vocab_size + 1.0);
        let mut logprobs = Vec::with_capacity(tokens.len());
        for token in &tokens {
            let weight = self.spec.vocabulary.get(token).copied().unwrap_or(0.0);
            let mass = weight + alpha;
            if mass <= 0.0 {
                return Err(BackendError::ZeroProbability(token.clone()));
            }
            logprobs.push((mass / denom).ln().min(0.0));
        }
        Ok(ScoredText { tokens, logprobs })
    }

    fn supports_scoring(&self) -> bool {
        !self.spec.vocabulary.is_empty()
    }
}
