//! Blocking HTTP client for OpenAI-compatible chat endpoints.
//!
//! Transport failures, timeouts, and retryable statuses (408, 429, 5xx) are
//! retried with exponential backoff. Once a response body has been received
//! the request is never resent: a malformed body is a protocol error, not a
//! reason to pay for the call twice.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{validate_request, ChatBackend, ChatMessage, LlmError, Semaphore};
use crate::llm::{BackendConfig, BackendKind};

pub struct WireBackend {
    cfg: BackendConfig,
    client: reqwest::blocking::Client,
    url: String,
    in_flight: Semaphore,
    backoff_base: Duration,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

impl WireBackend {
    pub fn new(cfg: BackendConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        if cfg.kind != BackendKind::Wire {
            return Err(LlmError::ConfigInvalid("WireBackend needs kind = wire".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_s))
            .build()
            .map_err(|e| LlmError::BackendUnavailable(format!("http client: {e}")))?;
        let endpoint = cfg.endpoint.as_deref().expect("validated");
        let url = format!("{}/chat/completions", endpoint.trim_end_matches('/'));
        let in_flight = Semaphore::new(cfg.max_in_flight);
        Ok(Self { cfg, client, url, in_flight, backoff_base: Duration::from_secs(1) })
    }

    /// Shrinks the retry backoff; only tests should want this.
    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    fn bearer_token(&self) -> Option<String> {
        std::env::var(&self.cfg.api_key_env).ok().filter(|v| !v.is_empty())
    }

    fn parse_reply(&self, body: &str) -> Result<ChatMessage, LlmError> {
        let parsed: ChatResponse = serde_json::from_str(body).map_err(|e| {
            LlmError::BackendProtocolError(format!(
                "bad response body: {e}; body starts {:?}",
                body.chars().take(120).collect::<String>()
            ))
        })?;
        let first = parsed.choices.into_iter().next().ok_or_else(|| {
            LlmError::BackendProtocolError("response has no choices".into())
        })?;
        Ok(ChatMessage::assistant(first.message.content))
    }
}

fn retryable_status(status: reqwest::StatusCode) -> bool {
    status.as_u16() == 408 || status.as_u16() == 429 || status.is_server_error()
}

impl ChatBackend for WireBackend {
    fn chat(&self, messages: &[ChatMessage]) -> Result<ChatMessage, LlmError> {
        validate_request(messages)?;
        let _permit = self.in_flight.acquire();
        let payload = json!({
            "model": self.cfg.model_name.as_deref().expect("validated"),
            "messages": messages,
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_reply_tokens,
        });

        let attempts = self.cfg.retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff_base * 2u32.pow(attempt as u32 - 1));
            }
            let mut req = self.client.post(&self.url).json(&payload);
            if let Some(token) = self.bearer_token() {
                req = req.bearer_auth(token);
            }
            match req.send() {
                Err(e) => {
                    last_error = format!("transport: {e}");
                }
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let body = resp.text().map_err(|e| {
                            LlmError::BackendProtocolError(format!("reading body: {e}"))
                        })?;
                        return self.parse_reply(&body);
                    }
                    let body = resp.text().unwrap_or_default();
                    let detail = format!(
                        "http {}: {:?}",
                        status.as_u16(),
                        body.chars().take(120).collect::<String>()
                    );
                    if !retryable_status(status) {
                        return Err(LlmError::BackendUnavailable(detail));
                    }
                    last_error = detail;
                }
            }
        }
        Err(LlmError::BackendUnavailable(format!(
            "gave up after {attempts} attempts; last error: {last_error}"
        )))
    }
}
