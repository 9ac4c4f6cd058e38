//! Text-generation backends: a uniform completion + token-scoring
//! interface with two implementations, an HTTP client for
//! OpenAI-compatible endpoints and a deterministic seeded mock. A small
//! batch driver fans requests out over a bounded worker pool and collects
//! results in input order, so outputs never depend on the parallelism
//! degree.

mod http;
mod mock;

pub use http::HttpBackend;
pub use mock::{EmissionPolicy, MockBackend, MockSpec};

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response body: {0}")]
    MalformedResponse(String),
    #[error("backend does not support token scoring: {0}")]
    ScoringUnsupported(String),
    #[error("text tokenizes to nothing")]
    EmptyTokenization,
    #[error("token '{0}' has zero probability under the mock vocabulary")]
    ZeroProbability(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    /// Sampling temperature; 0 means greedy decoding.
    pub temperature: f64,
    pub max_new_tokens: usize,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    /// Honored by the mock; passed through to HTTP backends that accept it.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            temperature: 0.7,
            max_new_tokens: 1024,
            stop_sequences: vec!["}\n".to_string()],
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_new_tokens < 1 {
            return Err(BackendError::InvalidRequest(
                "max_new_tokens must be at least 1".into(),
            ));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest(
                "temperature must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Token-level scores for a text under the backend's model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredText {
    pub tokens: Vec<String>,
    /// Natural-log probabilities, one per token, all <= 0.
    pub logprobs: Vec<f64>,
}

impl ScoredText {
    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    /// Per-text perplexity: exp of the mean negative log-probability.
    pub fn perplexity(&self) -> f64 {
        let n = self.logprobs.len() as f64;
        let mean: f64 = self.logprobs.iter().sum::<f64>() / n;
        (-mean).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
}

/// Declarative backend selection plus transport policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Full completions URL for HTTP backends.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub endpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub model: Option<String>,
    /// Bearer token; falls back to the TABFORGE_API_KEY env var.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auth_token: Option<String>,
    pub timeout_secs: u64,
    /// Concurrent request cap for batch generation.
    pub max_in_flight: usize,
    pub retries: u32,
    pub backoff_ms: u64,
    /// Mock behavior; ignored by HTTP backends.
    #[serde(default)]
    pub mock: MockSpec,
    /// When set, batch drivers append request/response JSONL here.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub audit_path: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: None,
            model: None,
            auth_token: None,
            timeout_secs: 60,
            max_in_flight: 4,
            retries: 2,
            backoff_ms: 250,
            mock: MockSpec::default(),
            audit_path: None,
        }
    }
}

impl BackendConfig {
    pub fn mock_default() -> Self {
        BackendConfig::default()
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_in_flight < 1 {
            return Err(BackendError::InvalidRequest(
                "max_in_flight must be at least 1".into(),
            ));
        }
        if self.timeout_secs == 0 {
            return Err(BackendError::InvalidRequest(
                "timeout must be positive".into(),
            ));
        }
        if self.kind == BackendKind::Http && self.endpoint.is_none() {
            return Err(BackendError::InvalidRequest(
                "http backend requires an endpoint".into(),
            ));
        }
        Ok(())
    }

    /// Builds the concrete backend described by this config.
    pub fn build(&self) -> Result<Box<dyn GenerationBackend>, BackendError> {
        self.validate()?;
        match self.kind {
            BackendKind::Mock => Ok(Box::new(MockBackend::new(self.mock.clone()))),
            BackendKind::Http => Ok(Box::new(HttpBackend::from_config(self)?)),
        }
    }
}

/// Abstract text generation plus token scoring.
pub trait GenerationBackend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError>;

    fn score(&self, text: &str) -> Result<ScoredText, BackendError>;

    fn supports_scoring(&self) -> bool {
        true
    }

    /// Total transport retries recorded so far (HTTP backends).
    fn retries_recorded(&self) -> u64 {
        0
    }
}

/// Runs a batch of requests through the backend with at most
/// `max_in_flight` concurrent calls. Results come back in input order;
/// with a deterministic backend the output is a pure function of the
/// requests, whatever the parallelism.
pub fn generate_batch(
    backend: &dyn GenerationBackend,
    requests: &[GenerationRequest],
    max_in_flight: usize,
) -> Vec<Result<String, BackendError>> {
    assert!(max_in_flight >= 1, "max_in_flight must be at least 1");
    if requests.is_empty() {
        return Vec::new();
    }
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<String, BackendError>>>> =
        requests.iter().map(|_| Mutex::new(None)).collect();

    let workers = max_in_flight.min(requests.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= requests.len() {
                    break;
                }
                let outcome = backend.generate(&requests[index]);
                *results[index].lock().expect("result slot") = Some(outcome);
            });
        }
    });

    results
        .into_iter()
        .map(|slot| slot.into_inner().expect("result slot").expect("slot filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_validation() {
        let mut r = GenerationRequest::new("hi");
        assert!(r.validate().is_ok());
        r.max_new_tokens = 0;
        assert!(r.validate().is_err());
        r.max_new_tokens = 10;
        r.temperature = f64::NAN;
        assert!(r.validate().is_err());
        r.temperature = -1.0;
        assert!(r.validate().is_err());
        r.temperature = 0.0;
        assert!(r.validate().is_ok());
    }

    #[test]
    fn config_validation() {
        let mut c = BackendConfig::default();
        assert!(c.validate().is_ok());
        c.max_in_flight = 0;
        assert!(c.validate().is_err());
        c.max_in_flight = 1;
        c.kind = BackendKind::Http;
        assert!(c.validate().is_err(), "http requires an endpoint");
    }

    #[test]
    fn batch_results_are_order_stable_across_parallelism() {
        let backend = MockBackend::new(MockSpec::default());
        let requests: Vec<GenerationRequest> = (0..100)
            .map(|i| {
                let mut r = GenerationRequest::new(format!(
                    "Example one: {{\"x\": \"{i}\", \"label\": \"0\"}}.\n Generate one sample:"
                ));
                r.seed = Some(5);
                r
            })
            .collect();
        let serial: Vec<String> = generate_batch(&backend, &requests, 1)
            .into_iter()
            .map(|r| r.unwrap())
            .collect();
        let parallel: Vec<String> = generate_batch(&backend, &requests, 8)
            .into_iter()
            .map(|r| r.unwrap())
            .collect();
        assert_eq!(serial, parallel);
    }
}
