#![allow(dead_code)]

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use futures::stream::BoxStream;
use futures::StreamExt;
use stepwise_client::{Client, ClientError};
use stepwise_core::api::{EventKind, SessionEvent};
use stepwise_core::backend::BackendError;
use stepwise_core::{ChatBackend, ChatRequest, ChatResult, Message, Persona, ScriptedBackend, SeedSample};
use stepwise_service::store::CreatedRecord;
use stepwise_service::{AppState, BackendFactory, LiveSettings, ServiceError, SessionBackends};

pub const RESPOND_HELLO: &str = "<think></think><response>hello</response>";
pub const WAIT: &str = "<think></think><wait>wait</wait>";

pub fn seed(id: &str) -> SeedSample {
    SeedSample {
        id: Some(id.into()),
        topic: "weekend plans".into(),
        characters: [
            Persona::new("Hu", "curious and direct"),
            Persona::new("Ai", "warm, a little sarcastic"),
        ],
        recent_conversations: vec![
            Message::seed("Hu", "so what are you doing saturday", 10.0),
            Message::seed("Ai", "no idea yet", 14.0),
        ],
        assigned_topic: None,
    }
}

type Make = dyn Fn() -> SessionBackends + Send + Sync;

/// Builds per-session backends from a closure.
pub struct Factory(pub Box<Make>);

impl BackendFactory for Factory {
    fn backends(&self, _session: &CreatedRecord) -> Result<SessionBackends, ServiceError> {
        Ok((self.0)())
    }

    fn model_id(&self) -> String {
        "test-model".into()
    }
}

/// Agent backend replaying `script` (last reply repeated), summarizer constant.
pub fn scripted(script: &'static [&'static str]) -> Arc<Factory> {
    Arc::new(Factory(Box::new(move || SessionBackends {
        agent: Arc::new(ScriptedBackend::new(script.iter().copied(), 0.0).repeating_last()),
        summarizer: Arc::new(ScriptedBackend::constant("they chatted")),
    })))
}

pub struct Server {
    pub client: Client,
    pub state: AppState,
    task: tokio::task::JoinHandle<()>,
}

impl Drop for Server {
    fn drop(&mut self) {
        self.task.abort();
    }
}

pub async fn start(dir: &Path, factory: Arc<dyn BackendFactory>, settings: LiveSettings) -> Server {
    let seeds = vec![seed("s1"), seed("s2")];
    let state = AppState::open(dir, seeds, settings, factory).expect("open state");
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = stepwise_service::router(state.clone());
    let task = tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    Server {
        client: Client::new(format!("http://{addr}")),
        state,
        task,
    }
}

pub type Events = BoxStream<'static, Result<SessionEvent, ClientError>>;

/// Next event, failing the test after `secs`.
pub async fn next(events: &mut Events, secs: f64) -> SessionEvent {
    tokio::time::timeout(Duration::from_secs_f64(secs), events.next())
        .await
        .expect("timed out waiting for an event")
        .expect("stream ended")
        .expect("event error")
}

/// Reads events until one of the given type arrives.
pub async fn until(events: &mut Events, name: &str, secs: f64) -> (Vec<SessionEvent>, SessionEvent) {
    let deadline = tokio::time::Instant::now() + Duration::from_secs_f64(secs);
    let mut seen = Vec::new();
    loop {
        let left = deadline.saturating_duration_since(tokio::time::Instant::now()).as_secs_f64();
        let e = next(events, left.max(0.001)).await;
        if e.kind.name() == name {
            return (seen, e);
        }
        seen.push(e);
    }
}

/// Collects everything that arrives within `secs`.
pub async fn drain(events: &mut Events, secs: f64) -> Vec<SessionEvent> {
    let mut out = Vec::new();
    let deadline = tokio::time::Instant::now() + Duration::from_secs_f64(secs);
    while let Ok(Some(Ok(e))) = tokio::time::timeout_at(deadline, events.next()).await {
        out.push(e);
    }
    out
}

pub fn count(events: &[SessionEvent], name: &str) -> usize {
    events.iter().filter(|e| e.kind.name() == name).count()
}

pub fn is_closed(e: &SessionEvent) -> bool {
    matches!(e.kind, EventKind::Closed { .. })
}

/// Agent backend that tracks concurrent calls and always waits.
#[derive(Default)]
pub struct Gauge {
    pub in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
    pub calls: AtomicUsize,
}

#[async_trait]
impl ChatBackend for Gauge {
    async fn complete(&self, _req: &ChatRequest) -> Result<ChatResult, BackendError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);
        tokio::time::sleep(Duration::from_millis(40)).await;
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        Ok(ChatResult {
            text: WAIT.into(),
            t_system_s: 0.0,
        })
    }
}
