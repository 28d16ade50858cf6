//! Chat-completion backends: one rendered prompt in, one text reply out.

mod remote;
mod scripted;

use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use remote::{RemoteBackend, RemoteConfig, API_KEY_ENV};
pub use scripted::{ScriptedBackend, ScriptedReply};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub prompt: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_chars: usize,
}

/// Request settings applied to every call a component makes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RequestDefaults {
    pub model_id: String,
    pub temperature: f64,
    pub max_output_chars: usize,
}

impl Default for RequestDefaults {
    fn default() -> Self {
        Self {
            model_id: "default".into(),
            temperature: 0.7,
            max_output_chars: 8000,
        }
    }
}

impl RequestDefaults {
    pub fn request(&self, prompt: impl Into<String>) -> ChatRequest {
        ChatRequest {
            prompt: prompt.into(),
            model_id: self.model_id.clone(),
            temperature: self.temperature,
            max_output_chars: self.max_output_chars,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResult {
    pub text: String,
    /// Wall-clock seconds spent in the call, including retries.
    pub t_system_s: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("scripted backend queue exhausted after {consumed} repl(ies)")]
    QueueExhausted { consumed: usize },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unexpected response: {0}")]
    InvalidResponse(String),
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResult, BackendError>;

    /// Short identifier used in logs and reports.
    fn label(&self) -> String {
        "backend".into()
    }
}

#[async_trait]
impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResult, BackendError> {
        (**self).complete(req).await
    }

    fn label(&self) -> String {
        (**self).label()
    }
}

pub(crate) fn validate_request(req: &ChatRequest) -> Result<(), BackendError> {
    if req.prompt.trim().is_empty() {
        return Err(BackendError::InvalidRequest("empty prompt".into()));
    }
    if !(0.0..=2.0).contains(&req.temperature) {
        return Err(BackendError::InvalidRequest(format!(
            "temperature {} outside [0, 2]",
            req.temperature
        )));
    }
    if req.max_output_chars == 0 {
        return Err(BackendError::InvalidRequest("max_output_chars must be positive".into()));
    }
    Ok(())
}
