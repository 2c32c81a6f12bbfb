use std::time::Duration;

use async_trait::async_trait;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tracing::{debug, warn};

use super::{apply_stop_sequences, Backend, BackendConfig, FinishReason, GenerationRequest, GenerationResponse};
use crate::error::{Error, Result};

const MAX_BACKOFF: Duration = Duration::from_secs(30);
const BODY_EXCERPT_CHARS: usize = 300;

/// Client for the `/v1/chat/completions` protocol.
///
/// The prompt goes out as a single user message. Transport errors, timeouts,
/// 429 and 5xx responses are retried up to `max_retries` times with
/// exponential backoff; other non-2xx statuses fail immediately. A semaphore
/// holds in-flight requests to `max_parallel_requests` across all callers.
pub struct HttpBackend {
    client: reqwest::Client,
    url: String,
    api_key: Option<String>,
    config: BackendConfig,
    slots: Semaphore,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: usize,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    stop: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatContent,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatContent {
    #[serde(default)]
    content: Option<String>,
}

enum AttemptError {
    Retryable(String),
    Fatal(String),
}

fn excerpt(body: &str) -> String {
    let mut s: String = body.chars().take(BODY_EXCERPT_CHARS).collect();
    if body.chars().count() > BODY_EXCERPT_CHARS {
        s.push('…');
    }
    s
}

pub(crate) fn chat_completions_url(endpoint: &str) -> String {
    let trimmed = endpoint.trim_end_matches('/');
    if trimmed.ends_with("/chat/completions") {
        trimmed.to_string()
    } else {
        format!("{trimmed}/chat/completions")
    }
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self> {
        if config.max_parallel_requests == 0 {
            return Err(Error::Validation("max_parallel_requests must be at least 1".into()));
        }
        let client = reqwest::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| Error::Backend(format!("building HTTP client: {e}")))?;
        let api_key = std::env::var(&config.api_key_env_var).ok().filter(|k| !k.is_empty());
        Ok(HttpBackend {
            client,
            url: chat_completions_url(&config.endpoint_url),
            api_key,
            slots: Semaphore::new(config.max_parallel_requests),
            config,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn backoff(&self, retry: u32) -> Duration {
        let base = Duration::from_millis(self.config.initial_backoff_ms);
        base.saturating_mul(1u32 << (retry.min(16) - 1)).min(MAX_BACKOFF)
    }

    async fn attempt(&self, request: &GenerationRequest) -> std::result::Result<GenerationResponse, AttemptError> {
        let body = ChatRequest {
            model: &self.config.model_name,
            messages: [ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            temperature: request.temperature,
            max_tokens: request.max_new_tokens,
            stop: &request.stop_sequences,
            seed: request.seed,
        };
        if tracing::enabled!(tracing::Level::DEBUG) {
            debug!(url = %self.url, body = %serde_json::to_string(&body).unwrap_or_default(), "chat request");
        }
        let _permit = self
            .slots
            .acquire()
            .await
            .map_err(|e| AttemptError::Fatal(e.to_string()))?;
        let mut builder = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .await
            .map_err(|e| AttemptError::Retryable(format!("request failed: {e}")))?;
        let status = response.status();
        let text = response
            .text()
            .await
            .map_err(|e| AttemptError::Retryable(format!("reading body: {e}")))?;
        debug!(status = status.as_u16(), body = %text, "chat response");

        if !status.is_success() {
            let msg = format!("HTTP {}: {}", status.as_u16(), excerpt(&text));
            return Err(if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
                AttemptError::Retryable(msg)
            } else {
                AttemptError::Fatal(msg)
            });
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| AttemptError::Fatal(format!("decoding response: {e}; body: {}", excerpt(&text))))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| AttemptError::Fatal("response has no choices".into()))?;
        let content = choice.message.content.unwrap_or_default();
        let (content, _) = apply_stop_sequences(&content, &request.stop_sequences);
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            _ => FinishReason::Stop,
        };
        Ok(GenerationResponse {
            text: content,
            finish_reason,
            error: None,
            attempts: 1,
        })
    }
}

#[async_trait]
impl Backend for HttpBackend {
    async fn generate(&self, request: &GenerationRequest) -> GenerationResponse {
        let mut last_error = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                tokio::time::sleep(self.backoff(attempt)).await;
            }
            match self.attempt(request).await {
                Ok(mut response) => {
                    response.attempts = attempt + 1;
                    return response;
                }
                Err(AttemptError::Fatal(msg)) => return GenerationResponse::failed(msg, attempt + 1),
                Err(AttemptError::Retryable(msg)) => {
                    warn!(attempt = attempt + 1, error = %msg, "generation attempt failed");
                    last_error = msg;
                }
            }
        }
        GenerationResponse::failed(last_error, self.config.max_retries + 1)
    }

    fn max_parallel(&self) -> usize {
        self.config.max_parallel_requests
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_joining() {
        assert_eq!(chat_completions_url("http://h:1/v1/"), "http://h:1/v1/chat/completions");
        assert_eq!(
            chat_completions_url("http://h:1/v1/chat/completions"),
            "http://h:1/v1/chat/completions"
        );
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let backend = HttpBackend::new(BackendConfig {
            initial_backoff_ms: 100,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(backend.backoff(1), Duration::from_millis(100));
        assert_eq!(backend.backoff(3), Duration::from_millis(400));
        assert_eq!(backend.backoff(30), MAX_BACKOFF);
    }

    #[test]
    fn zero_parallelism_rejected() {
        let config = BackendConfig {
            max_parallel_requests: 0,
            ..Default::default()
        };
        assert!(HttpBackend::new(config).is_err());
    }

    #[test]
    fn excerpt_truncates() {
        let long = "x".repeat(1000);
        assert_eq!(excerpt(&long).chars().count(), BODY_EXCERPT_CHARS + 1);
        assert_eq!(excerpt("short"), "short");
    }
}
