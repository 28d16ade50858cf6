use std::collections::VecDeque;
use std::sync::Mutex;

use async_trait::async_trait;

use super::{validate_request, BackendError, ChatBackend, ChatRequest, ChatResult};

/// One canned outcome of a scripted call.
#[derive(Debug, Clone, PartialEq)]
pub enum ScriptedReply {
    Text(String),
    Fail(BackendError),
}

impl From<&str> for ScriptedReply {
    fn from(s: &str) -> Self {
        ScriptedReply::Text(s.to_string())
    }
}

impl From<String> for ScriptedReply {
    fn from(s: String) -> Self {
        ScriptedReply::Text(s)
    }
}

#[derive(Debug)]
struct Cursor {
    queue: VecDeque<ScriptedReply>,
    consumed: usize,
    prompts: Vec<String>,
}

/// Deterministic backend returning queued replies in order.
///
/// A scripted backend belongs to one session: its cursor is stateful, so
/// sharing one instance between concurrent sessions interleaves their scripts.
#[derive(Debug)]
pub struct ScriptedBackend {
    cursor: Mutex<Cursor>,
    fixed_t_system_s: f64,
    /// When set, the last reply is repeated instead of exhausting.
    repeat_last: bool,
    label: String,
}

impl ScriptedBackend {
    pub fn new<I, R>(replies: I, fixed_t_system_s: f64) -> Self
    where
        I: IntoIterator<Item = R>,
        R: Into<ScriptedReply>,
    {
        assert!(fixed_t_system_s >= 0.0, "t_system must be non-negative");
        Self {
            cursor: Mutex::new(Cursor {
                queue: replies.into_iter().map(Into::into).collect(),
                consumed: 0,
                prompts: Vec::new(),
            }),
            fixed_t_system_s,
            repeat_last: false,
            label: "scripted".into(),
        }
    }

    /// A backend that answers every call with `text`.
    pub fn constant(text: impl Into<String>) -> Self {
        let mut b = Self::new([text.into()], 0.0);
        b.repeat_last = true;
        b
    }

    pub fn repeating_last(mut self) -> Self {
        self.repeat_last = true;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn remaining(&self) -> usize {
        self.cursor.lock().unwrap().queue.len()
    }

    pub fn consumed(&self) -> usize {
        self.cursor.lock().unwrap().consumed
    }

    /// Every prompt received so far, in call order.
    pub fn prompts(&self) -> Vec<String> {
        self.cursor.lock().unwrap().prompts.clone()
    }
}

#[async_trait]
impl ChatBackend for ScriptedBackend {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatResult, BackendError> {
        validate_request(req)?;
        let reply = {
            let mut cur = self.cursor.lock().unwrap();
            cur.prompts.push(req.prompt.clone());
            let next = if self.repeat_last && cur.queue.len() == 1 {
                cur.queue.front().cloned()
            } else {
                cur.queue.pop_front()
            };
            match next {
                Some(r) => {
                    cur.consumed += 1;
                    r
                }
                None => {
                    return Err(BackendError::QueueExhausted { consumed: cur.consumed });
                }
            }
        };
        match reply {
            ScriptedReply::Text(text) => Ok(ChatResult {
                text,
                t_system_s: self.fixed_t_system_s,
            }),
            ScriptedReply::Fail(e) => Err(e),
        }
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::RequestDefaults;

    fn req() -> ChatRequest {
        RequestDefaults::default().request("prompt")
    }

    #[tokio::test]
    async fn echoes_in_order() {
        let b = ScriptedBackend::new(["<think>a<\\think><wait>w<\\wait>", "second"], 0.5);
        let r = b.complete(&req()).await.unwrap();
        assert_eq!(r.text, "<think>a<\\think><wait>w<\\wait>");
        assert_eq!(r.t_system_s, 0.5);
        assert_eq!(b.complete(&req()).await.unwrap().text, "second");
        assert_eq!(b.consumed(), 2);
    }

    #[tokio::test]
    async fn empty_queue_is_exhausted() {
        let b = ScriptedBackend::new(Vec::<String>::new(), 0.0);
        assert_eq!(
            b.complete(&req()).await.unwrap_err(),
            BackendError::QueueExhausted { consumed: 0 }
        );
    }

    #[tokio::test]
    async fn injected_failures_are_consumed() {
        let b = ScriptedBackend::new(
            [
                ScriptedReply::Fail(BackendError::Transport {
                    attempts: 1,
                    message: "boom".into(),
                }),
                "ok".into(),
            ],
            0.0,
        );
        assert!(b.complete(&req()).await.is_err());
        assert_eq!(b.complete(&req()).await.unwrap().text, "ok");
    }

    #[tokio::test]
    async fn constant_never_exhausts() {
        let b = ScriptedBackend::constant("S");
        for _ in 0..5 {
            assert_eq!(b.complete(&req()).await.unwrap().text, "S");
        }
    }

    #[tokio::test]
    async fn rejects_empty_prompt() {
        let b = ScriptedBackend::constant("S");
        let r = RequestDefaults::default().request("   ");
        assert!(matches!(b.complete(&r).await, Err(BackendError::InvalidRequest(_))));
        assert_eq!(b.consumed(), 0);
    }
}
