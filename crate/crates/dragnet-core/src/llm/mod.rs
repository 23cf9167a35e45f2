//! Model backend abstraction.
//!
//! Three implementations of one trait: a wire client speaking the
//! OpenAI-compatible chat schema, a rule-driven scripted backend that makes
//! every test hermetic, and (in `judge`) the scoring interface built on
//! either. Pipelines only ever see `dyn ChatBackend`.

mod judge;
mod scripted;
mod wire;

pub use judge::{judge, judge_with_backend, lexical_score, JudgeVerdict};
pub use scripted::{write_script, MatchSpec, ScriptRule, ScriptedBackend};
pub use wire::WireBackend;

use std::path::Path;
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend protocol error: {0}")]
    BackendProtocolError(String),
    #[error("invalid backend config: {0}")]
    ConfigInvalid(String),
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("script error: {0}")]
    ScriptError(String),
    #[error("judge verdict unparseable after reprompt: {0}")]
    JudgeParseError(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl LlmError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }

    pub fn tool(content: impl Into<String>) -> Self {
        Self { role: Role::Tool, content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Wire,
    #[default]
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_reply_tokens")]
    pub max_reply_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_path: Option<String>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub retries: usize,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_max_reply_tokens() -> usize {
    1024
}

fn default_timeout_s() -> f64 {
    120.0
}

fn default_retries() -> usize {
    3
}

fn default_api_key_env() -> String {
    "RAG_LLM_API_KEY".into()
}

fn default_max_in_flight() -> usize {
    8
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            endpoint: None,
            model_name: None,
            temperature: 0.0,
            max_reply_tokens: default_max_reply_tokens(),
            script_path: None,
            timeout_s: default_timeout_s(),
            retries: default_retries(),
            api_key_env: default_api_key_env(),
            max_in_flight: default_max_in_flight(),
        }
    }
}

impl BackendConfig {
    pub fn scripted(script_path: impl Into<String>) -> Self {
        Self { script_path: Some(script_path.into()), ..Self::default() }
    }

    pub fn wire(endpoint: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Wire,
            endpoint: Some(endpoint.into()),
            model_name: Some(model_name.into()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        match self.kind {
            BackendKind::Wire => {
                if self.endpoint.is_none() || self.model_name.is_none() {
                    return Err(LlmError::ConfigInvalid(
                        "wire backend requires endpoint and model_name".into(),
                    ));
                }
                if self.script_path.is_some() {
                    return Err(LlmError::ConfigInvalid(
                        "script_path is only valid for the scripted backend".into(),
                    ));
                }
            }
            BackendKind::Scripted => {
                if self.script_path.is_none() {
                    return Err(LlmError::ConfigInvalid(
                        "scripted backend requires script_path".into(),
                    ));
                }
                if self.endpoint.is_some() || self.model_name.is_some() {
                    return Err(LlmError::ConfigInvalid(
                        "endpoint and model_name are only valid for the wire backend".into(),
                    ));
                }
            }
        }
        if self.temperature < 0.0 {
            return Err(LlmError::ConfigInvalid("temperature must be >= 0".into()));
        }
        if self.max_reply_tokens == 0 {
            return Err(LlmError::ConfigInvalid("max_reply_tokens must be at least 1".into()));
        }
        if !(self.timeout_s > 0.0) {
            return Err(LlmError::ConfigInvalid("timeout_s must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(LlmError::ConfigInvalid("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }
}

/// A chat-completion backend. One call, one assistant reply.
pub trait ChatBackend: Send + Sync {
    fn chat(&self, messages: &[ChatMessage]) -> Result<ChatMessage, LlmError>;
}

/// Validates the shared preconditions every backend relies on.
pub(crate) fn validate_request(messages: &[ChatMessage]) -> Result<(), LlmError> {
    let Some(first) = messages.first() else {
        return Err(LlmError::InvalidRequest("message list is empty".into()));
    };
    if !matches!(first.role, Role::System | Role::User) {
        return Err(LlmError::InvalidRequest(
            "first message must be system or user".into(),
        ));
    }
    for m in messages {
        if m.content.is_empty() && m.role != Role::Assistant {
            return Err(LlmError::InvalidRequest(format!(
                "empty content on {:?} message",
                m.role
            )));
        }
    }
    Ok(())
}

/// Builds the backend described by the config.
pub fn make_backend(cfg: &BackendConfig) -> Result<Box<dyn ChatBackend>, LlmError> {
    cfg.validate()?;
    match cfg.kind {
        BackendKind::Scripted => {
            let path = cfg.script_path.as_deref().expect("validated");
            Ok(Box::new(ScriptedBackend::from_path(Path::new(path))?))
        }
        BackendKind::Wire => Ok(Box::new(WireBackend::new(cfg.clone())?)),
    }
}

/// One-shot convenience; note a scripted backend's `once` state does not
/// survive across calls made this way.
pub fn chat(messages: &[ChatMessage], cfg: &BackendConfig) -> Result<ChatMessage, LlmError> {
    make_backend(cfg)?.chat(messages)
}

/// Counting semaphore bounding in-flight wire requests.
pub(crate) struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self { permits: Mutex::new(permits), cv: Condvar::new() }
    }

    pub fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cv.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { sem: self }
    }
}

pub(crate) struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.sem.permits.lock().unwrap();
        *permits += 1;
        self.sem.cv.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_field_pairing_enforced() {
        assert!(BackendConfig::default().validate().is_err());
        assert!(BackendConfig::scripted("rules.jsonl").validate().is_ok());
        assert!(BackendConfig::wire("http://localhost:1", "m").validate().is_ok());

        let mut mixed = BackendConfig::scripted("rules.jsonl");
        mixed.endpoint = Some("http://x".into());
        assert!(mixed.validate().is_err());

        let mut wire = BackendConfig::wire("http://localhost:1", "m");
        wire.script_path = Some("rules.jsonl".into());
        assert!(wire.validate().is_err());
    }

    #[test]
    fn request_preconditions_checked() {
        assert!(validate_request(&[]).is_err());
        assert!(validate_request(&[ChatMessage::assistant("x")]).is_err());
        assert!(validate_request(&[ChatMessage::user("")]).is_err());
        assert!(validate_request(&[
            ChatMessage::system("s"),
            ChatMessage::assistant(""),
        ])
        .is_ok());
    }

    #[test]
    fn semaphore_bounds_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Arc;

        let sem = Arc::new(Semaphore::new(3));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..16)
            .map(|_| {
                let sem = sem.clone();
                let live = live.clone();
                let peak = peak.clone();
                std::thread::spawn(move || {
                    let _g = sem.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(std::time::Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 3);
    }
}
