//! Typed client for the chat session service.

use futures::stream::{self, BoxStream, StreamExt};
use reqwest::{Method, RequestBuilder, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use stepwise_core::api::{
    Ack, AnonymizedTranscript, CreateSession, ErrorBody, PostMessage, Questionnaire, RoleIdExport, SessionCreated,
    SessionEvent, SessionSummary,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    /// The service answered with an error body.
    #[error("{status} {code}: {message}")]
    Api {
        status: StatusCode,
        code: String,
        message: String,
    },
    #[error("malformed event: {0}")]
    Event(String),
}

impl ClientError {
    /// Error code from the service, if the failure came from it.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { code, .. } => Some(code),
            _ => None,
        }
    }

    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base: base_url.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn req(&self, method: Method, path: &str) -> RequestBuilder {
        self.http.request(method, format!("{}{}", self.base, path))
    }

    async fn send<T: DeserializeOwned>(&self, rb: RequestBuilder) -> Result<T, ClientError> {
        let resp = rb.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await.unwrap_or_default();
        Err(match serde_json::from_str::<ErrorBody>(&text) {
            Ok(b) => ClientError::Api {
                status,
                code: b.error.code,
                message: b.error.message,
            },
            Err(_) => ClientError::Api {
                status,
                code: "Http".into(),
                message: text,
            },
        })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        self.send(self.req(Method::GET, path)).await
    }

    async fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        self.send(self.req(Method::POST, path).json(body)).await
    }

    pub async fn health(&self) -> Result<bool, ClientError> {
        let v: Value = self.get("/healthz").await?;
        Ok(v["ok"].as_bool().unwrap_or(false))
    }

    pub async fn seeds(&self) -> Result<Vec<Value>, ClientError> {
        self.get("/seeds").await
    }

    pub async fn create_session(&self, req: &CreateSession) -> Result<SessionCreated, ClientError> {
        self.post("/sessions", req).await
    }

    pub async fn list_sessions(&self) -> Result<Vec<SessionSummary>, ClientError> {
        self.get("/sessions").await
    }

    pub async fn session(&self, id: &str) -> Result<SessionSummary, ClientError> {
        self.get(&format!("/sessions/{id}")).await
    }

    pub async fn post_message(&self, id: &str, text: &str) -> Result<Ack, ClientError> {
        self.post(&format!("/sessions/{id}/messages"), &PostMessage { text: text.into() })
            .await
    }

    pub async fn close(&self, id: &str, reason: Option<&str>) -> Result<Ack, ClientError> {
        self.post(&format!("/sessions/{id}/close"), &serde_json::json!({ "reason": reason }))
            .await
    }

    /// Full transcript in the on-disk JSON format.
    pub async fn transcript(&self, id: &str) -> Result<Value, ClientError> {
        self.get(&format!("/sessions/{id}/transcript")).await
    }

    pub async fn anonymized(&self, id: &str) -> Result<AnonymizedTranscript, ClientError> {
        self.get(&format!("/transcripts/{id}")).await
    }

    pub async fn submit_questionnaire(&self, q: &Questionnaire) -> Result<Ack, ClientError> {
        self.post("/questionnaires", q).await
    }

    pub async fn export_roleid(&self) -> Result<RoleIdExport, ClientError> {
        self.get("/export/roleid").await
    }

    /// Event stream of a session starting after `after`. Ends when the
    /// service closes the stream, which it does after the `closed` event.
    pub async fn events(
        &self,
        id: &str,
        after: u64,
    ) -> Result<BoxStream<'static, Result<SessionEvent, ClientError>>, ClientError> {
        let rb = self
            .req(Method::GET, &format!("/sessions/{id}/events"))
            .header("accept", "text/event-stream")
            .header("last-event-id", after.to_string());
        let resp = rb.send().await?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            let (code, message) = match serde_json::from_str::<ErrorBody>(&text) {
                Ok(b) => (b.error.code, b.error.message),
                Err(_) => ("Http".into(), text),
            };
            return Err(ClientError::Api { status, code, message });
        }
        let bytes = resp.bytes_stream();
        let s = stream::unfold(
            (bytes, SseParser::default(), std::collections::VecDeque::new()),
            |(mut bytes, mut parser, mut ready)| async move {
                loop {
                    if let Some(item) = ready.pop_front() {
                        return Some((item, (bytes, parser, ready)));
                    }
                    match bytes.next().await {
                        Some(Ok(chunk)) => {
                            for data in parser.feed(&chunk) {
                                ready.push_back(
                                    serde_json::from_str::<SessionEvent>(&data)
                                        .map_err(|e| ClientError::Event(e.to_string())),
                                );
                            }
                        }
                        Some(Err(e)) => return Some((Err(ClientError::Http(e)), (bytes, parser, ready))),
                        None => return None,
                    }
                }
            },
        );
        Ok(s.boxed())
    }
}

/// Incremental `text/event-stream` parser yielding the data payload of each
/// dispatched event. Comments (keep-alives) and other fields are ignored.
#[derive(Debug, Default)]
pub struct SseParser {
    buf: Vec<u8>,
    data: Vec<String>,
}

impl SseParser {
    pub fn feed(&mut self, chunk: &[u8]) -> Vec<String> {
        self.buf.extend_from_slice(chunk);
        let mut out = Vec::new();
        while let Some(pos) = self.buf.iter().position(|&b| b == b'\n') {
            let mut line: Vec<u8> = self.buf.drain(..=pos).collect();
            line.pop();
            if line.last() == Some(&b'\r') {
                line.pop();
            }
            let line = String::from_utf8_lossy(&line);
            if line.is_empty() {
                if !self.data.is_empty() {
                    out.push(self.data.join("\n"));
                    self.data.clear();
                }
                continue;
            }
            if line.starts_with(':') {
                continue;
            }
            let (field, value) = match line.split_once(':') {
                Some((f, v)) => (f, v.strip_prefix(' ').unwrap_or(v)),
                None => (line.as_ref(), ""),
            };
            if field == "data" {
                self.data.push(value.to_string());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_events_split_across_chunks() {
        let mut p = SseParser::default();
        assert!(p.feed(b": keep-alive\n\nid: 1\nevent: message\nda").is_empty());
        let got = p.feed(b"ta: {\"a\":1}\r\n\r\ndata: x\ndata: y\n\n");
        assert_eq!(got, vec!["{\"a\":1}".to_string(), "x\ny".to_string()]);
    }
}
