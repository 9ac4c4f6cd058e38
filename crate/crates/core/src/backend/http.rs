//! HTTP client for OpenAI-compatible completion endpoints.
//!
//! Generation posts `{model, prompt, temperature, max_tokens, stop, seed}`
//! to the configured completions URL. Scoring uses the echo/logprobs
//! facility (`echo: true, max_tokens: 0, logprobs: 0`); endpoints without
//! it surface a capability error so callers can gate perplexity metrics.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{BackendConfig, BackendError, GenerationBackend, GenerationRequest, ScoredText};

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: Option<String>,
    auth_token: Option<String>,
    retries: u32,
    backoff_ms: u64,
    retries_recorded: AtomicU64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
    #[serde(default)]
    logprobs: Option<Logprobs>,
}

#[derive(Deserialize)]
struct Logprobs {
    #[serde(default)]
    tokens: Vec<String>,
    #[serde(default)]
    token_logprobs: Vec<Option<f64>>,
}

impl HttpBackend {
    pub fn from_config(config: &BackendConfig) -> Result<Self, BackendError> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| BackendError::InvalidRequest("http backend requires an endpoint".into()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let auth_token = config
            .auth_token
            .clone()
            .or_else(|| std::env::var("TABFORGE_API_KEY").ok());
        Ok(HttpBackend {
            client,
            endpoint,
            model: config.model.clone(),
            auth_token,
            retries: config.retries,
            backoff_ms: config.backoff_ms,
            retries_recorded: AtomicU64::new(0),
        })
    }

    fn post(&self, body: &serde_json::Value) -> Result<CompletionResponse, BackendError> {
        let mut last_error = BackendError::Transport("no attempt made".into());
        for attempt in 0..=self.retries {
            if attempt > 0 {
                self.retries_recorded.fetch_add(1, Ordering::Relaxed);
                std::thread::sleep(Duration::from_millis(self.backoff_ms << (attempt - 1)));
            }
            let sent = self
                .client
                .post(&self.endpoint)
                .header("content-type", "application/json");
            let sent = match &self.auth_token {
                Some(token) => sent.bearer_auth(token),
                None => sent,
            };
            match sent.json(body).send() {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        return response.json::<CompletionResponse>().map_err(|e| {
                            BackendError::MalformedResponse(e.to_string())
                        });
                    }
                    let body = response.text().unwrap_or_default();
                    last_error = BackendError::Status {
                        status: status.as_u16(),
                        body: body.chars().take(300).collect(),
                    };
                    // Client errors other than 429 will not improve on retry.
                    if status.is_client_error() && status.as_u16() != 429 {
                        return Err(last_error);
                    }
                }
                Err(e) if e.is_timeout() => last_error = BackendError::Timeout,
                Err(e) => last_error = BackendError::Transport(e.to_string()),
            }
            log::warn!("request attempt {} failed: {last_error}", attempt + 1);
        }
        Err(last_error)
    }
}

impl GenerationBackend for HttpBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        request.validate()?;
        let mut body = json!({
            "prompt": request.prompt,
            "temperature": request.temperature,
            "max_tokens": request.max_new_tokens,
        });
        if !request.stop_sequences.is_empty() {
            body["stop"] = json!(request.stop_sequences);
        }
        if let Some(model) = &self.model {
            body["model"] = json!(model);
        }
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        let response = self.post(&body)?;
        let choice = response
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::MalformedResponse("no choices in response".into()))?;
        Ok(choice.text)
    }

    fn score(&self, text: &str) -> Result<ScoredText, BackendError> {
        if text.is_empty() {
            return Err(BackendError::EmptyTokenization);
        }
        let mut body = json!({
            "prompt": text,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
            "temperature": 0.0,
        });
        if let Some(model) = &self.model {
            body["model"] = json!(model);
        }
        let response = self.post(&body)?;
        let choice = response
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::MalformedResponse("no choices in response".into()))?;
        let logprobs = choice.logprobs.ok_or_else(|| {
            BackendError::ScoringUnsupported("endpoint returned no logprobs field".into())
        })?;
        // The first prompt token usually has no logprob; skip null slots.
        let mut tokens = Vec::new();
        let mut values = Vec::new();
        for (token, lp) in logprobs.tokens.iter().zip(&logprobs.token_logprobs) {
            if let Some(lp) = lp {
                tokens.push(token.clone());
                values.push(lp.min(0.0));
            }
        }
        if tokens.is_empty() {
            return Err(BackendError::EmptyTokenization);
        }
        Ok(ScoredText {
            tokens,
            logprobs: values,
        })
    }

    fn retries_recorded(&self) -> u64 {
        self.retries_recorded.load(Ordering::Relaxed)
    }
}
