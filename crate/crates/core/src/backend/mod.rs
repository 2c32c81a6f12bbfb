//! Text generation behind one interface: a chat-completion HTTP endpoint or an
//! offline scripted mock. Also writes the prompt/completion file consumed by
//! an external finetuning job.

mod export;
mod http;
mod mock;

use std::time::Duration;

use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

pub use export::{export_finetune_dataset, finetune_records, FinetuneRecord};
pub use http::HttpBackend;
pub use mock::{MockBackend, MockFallback, MockRule, MockScope, MockScript};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_new_tokens: usize,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, temperature: f64, max_new_tokens: usize) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            temperature: temperature.max(0.0),
            max_new_tokens: max_new_tokens.max(1),
            stop_sequences: Vec::new(),
            seed: None,
        }
    }

    pub fn with_stop(mut self, stop: impl Into<String>) -> Self {
        self.stop_sequences.push(stop.into());
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    /// Set when `finish_reason` is `Error`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Requests sent to produce this response, retries included.
    #[serde(default)]
    pub attempts: u32,
}

impl GenerationResponse {
    pub fn stop(text: impl Into<String>) -> Self {
        GenerationResponse {
            text: text.into(),
            finish_reason: FinishReason::Stop,
            error: None,
            attempts: 1,
        }
    }

    pub fn failed(message: impl Into<String>, attempts: u32) -> Self {
        GenerationResponse {
            text: String::new(),
            finish_reason: FinishReason::Error,
            error: Some(message.into()),
            attempts,
        }
    }

    pub fn is_error(&self) -> bool {
        self.finish_reason == FinishReason::Error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// Base URL (`.../v1`) or the full `.../chat/completions` URL.
    pub endpoint_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env_var: String,
    pub model_name: String,
    #[serde(with = "duration_secs", rename = "request_timeout_secs")]
    pub request_timeout: Duration,
    pub max_retries: u32,
    pub max_parallel_requests: usize,
    /// First retry delay; doubles on every further attempt.
    pub initial_backoff_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint_url: "http://localhost:8000/v1".to_string(),
            api_key_env_var: "OPENAI_API_KEY".to_string(),
            model_name: "default".to_string(),
            request_timeout: Duration::from_secs(120),
            max_retries: 3,
            max_parallel_requests: 8,
            initial_backoff_ms: 250,
        }
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

#[async_trait]
pub trait Backend: Send + Sync {
    async fn generate(&self, request: &GenerationRequest) -> GenerationResponse;

    /// Upper bound on requests in flight at once.
    fn max_parallel(&self) -> usize;

    /// Positionally aligned responses; a failed item never affects its neighbours.
    async fn batch_generate(&self, requests: &[GenerationRequest]) -> Vec<GenerationResponse> {
        // Collected first so the stream holds one concrete future type,
        // which keeps the returned future `Send`.
        let pending: Vec<_> = requests.iter().map(|request| self.generate(request)).collect();
        stream::iter(pending)
            .buffered(self.max_parallel().max(1))
            .collect()
            .await
    }
}

/// Cuts `text` before the earliest stop sequence. Returns whether a cut happened.
pub fn apply_stop_sequences(text: &str, stops: &[String]) -> (String, bool) {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min();
    match cut {
        Some(at) => (text[..at].to_string(), true),
        None => (text.to_string(), false),
    }
}
