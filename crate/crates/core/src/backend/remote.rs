use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{validate_request, BackendError, ChatBackend, ChatRequest, ChatResult};

pub const API_KEY_ENV: &str = "CHAT_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Full URL of an OpenAI-compatible `chat/completions` endpoint.
    pub endpoint: String,
    pub retry_budget: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    pub timeout_s: f64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            retry_budget: 3,
            backoff_base_ms: 500,
            backoff_max_ms: 30_000,
            timeout_s: 120.0,
        }
    }
}

/// HTTP client speaking the chat-completions wire format. The single
/// rendered prompt is sent as one user message.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    http: reqwest::Client,
    cfg: RemoteConfig,
    api_key: String,
}

enum Attempt {
    Retry(String),
    Fatal(BackendError),
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig, api_key: impl Into<String>) -> Result<Self, BackendError> {
        let api_key = api_key.into();
        if api_key.trim().is_empty() {
            return Err(BackendError::Auth("empty API key".into()));
        }
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_s))
            .build()
            .map_err(|e| BackendError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self { http, cfg, api_key })
    }

    /// Reads the credential from `CHAT_API_KEY`.
    pub fn from_env(cfg: RemoteConfig) -> Result<Self, BackendError> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| BackendError::Auth(format!("{API_KEY_ENV} is not set")))?;
        Self::new(cfg, key)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .cfg
            .backoff_base_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.cfg.backoff_max_ms);
        Duration::from_millis(ms)
    }

    async fn attempt(&self, req: &ChatRequest) -> Result<String, Attempt> {
        let body = json!({
            "model": req.model_id,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_output_chars,
        });
        let resp = self
            .http
            .post(&self.cfg.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .await
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(Attempt::Fatal(BackendError::Auth(format!("HTTP {status}"))));
        }
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            return Err(Attempt::Fatal(BackendError::InvalidRequest(format!("HTTP {status}: {text}"))));
        }
        let v: Value = resp.json().await.map_err(|e| Attempt::Retry(e.to_string()))?;
        extract_text(&v)
            .map(|t| t.chars().take(req.max_output_chars).collect())
            .ok_or_else(|| Attempt::Fatal(BackendError::InvalidResponse(format!("no message content in {v}"))))
    }
}

fn extract_text(v: &Value) -> Option<String> {
    let choice = v.get("choices")?.get(0)?;
    if let Some(c) = choice.get("message").and_then(|m| m.get("content")).and_then(Value::as_str) {
        return Some(c.to_string());
    }
    choice.get("text").and_then(Value::as_str).map(str::to_string)
}

#[async_trait]
impl ChatBackend for RemoteBackend {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResult, BackendError> {
        validate_request(req)?;
        let started = Instant::now();
        let mut attempt = 0u32;
        loop {
            match self.attempt(req).await {
                Ok(text) => {
                    return Ok(ChatResult {
                        text,
                        t_system_s: started.elapsed().as_secs_f64(),
                    })
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(message)) => {
                    if attempt >= self.cfg.retry_budget {
                        return Err(BackendError::Transport {
                            attempts: attempt + 1,
                            message,
                        });
                    }
                    tracing::warn!(attempt, %message, "chat request failed, retrying");
                    tokio::time::sleep(self.backoff(attempt)).await;
                    attempt += 1;
                }
            }
        }
    }

    fn label(&self) -> String {
        "remote".into()
    }
}
