//! One live session: shared event log plus an actor task that owns the
//! agent state and serializes every mutation.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use stepwise_core::agent::{apply_summary, observe_offline, summary_prompt};
use stepwise_core::api::{EventKind, SessionEvent, SessionStatus};
use stepwise_core::baseline::{BaselineConfig, Baselines};
use stepwise_core::dialogue::StepRecord;
use stepwise_core::{
    AgentConfig, AgentState, AgentStep, ChatBackend, Message, Origin, RequestDefaults, SeedSample, StepwiseAgent,
    SystemLabel, Transcript,
};
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio::time::Instant;

use crate::error::ServiceError;
use crate::store::{observe_needs_summary, CreatedRecord, LogRecord, LogWriter, ScheduledRecord};

/// Backends used by one session.
#[derive(Clone)]
pub struct SessionBackends {
    pub agent: Arc<dyn ChatBackend>,
    pub summarizer: Arc<dyn ChatBackend>,
}

/// Agent and pacing settings applied to live sessions.
#[derive(Debug, Clone)]
pub struct LiveSettings {
    pub agent: AgentConfig,
    pub baseline: BaselineConfig,
    pub request: RequestDefaults,
    pub inactivity_timeout: Duration,
    pub max_consecutive_steps: usize,
    pub min_human_turns: usize,
}

impl Default for LiveSettings {
    fn default() -> Self {
        Self {
            agent: AgentConfig::default(),
            baseline: BaselineConfig::default(),
            request: RequestDefaults::default(),
            inactivity_timeout: Duration::from_secs(1800),
            max_consecutive_steps: 20,
            min_human_turns: 5,
        }
    }
}

struct SharedInner {
    events: Vec<SessionEvent>,
    transcript: Transcript,
    status: SessionStatus,
    log: LogWriter,
}

/// Read side of a session, shared between the actor and HTTP handlers.
pub struct SessionShared {
    pub info: CreatedRecord,
    inner: Mutex<SharedInner>,
    tx: broadcast::Sender<SessionEvent>,
}

impl SessionShared {
    pub fn new(info: CreatedRecord, seed: SeedSample, log: LogWriter) -> Self {
        let (tx, _) = broadcast::channel(1024);
        let transcript = Transcript::new(seed, info.system);
        Self {
            info,
            inner: Mutex::new(SharedInner {
                events: Vec::new(),
                transcript,
                status: SessionStatus::Active,
                log,
            }),
            tx,
        }
    }

    /// Restores already-logged events and steps without writing them again.
    pub fn restore(&self, events: Vec<SessionEvent>, steps: Vec<StepRecord>) {
        let mut g = self.inner.lock().expect("session lock");
        for e in &events {
            if let Some(m) = self.message_for(&e.kind, e.at_s) {
                g.transcript.messages.push(m);
            }
            if matches!(e.kind, EventKind::Closed { .. }) {
                g.status = SessionStatus::Closed;
            }
        }
        g.transcript.steps = steps;
        g.events = events;
    }

    fn message_for(&self, kind: &EventKind, at_s: f64) -> Option<Message> {
        match kind {
            EventKind::UserMessage { role, text } => Some(Message::new(role, text, at_s, Origin::Human)),
            EventKind::Message { role, text, .. } => Some(Message::new(role, text, at_s, Origin::Agent)),
            _ => None,
        }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<SessionEvent> {
        self.tx.subscribe()
    }

    pub fn events_after(&self, after: u64) -> Vec<SessionEvent> {
        let g = self.inner.lock().expect("session lock");
        g.events.iter().filter(|e| e.seq > after).cloned().collect()
    }

    pub fn status(&self) -> SessionStatus {
        self.inner.lock().expect("session lock").status
    }

    pub fn transcript(&self) -> Transcript {
        self.inner.lock().expect("session lock").transcript.clone()
    }

    fn log(&self, rec: &LogRecord) {
        let mut g = self.inner.lock().expect("session lock");
        if let Err(e) = g.log.append(rec) {
            tracing::error!(session = %self.info.id, error = %e, "failed to append to session log");
        }
    }

    /// Persists one event, then broadcasts it.
    fn emit(&self, at_s: f64, kind: EventKind) -> SessionEvent {
        let mut g = self.inner.lock().expect("session lock");
        let event = SessionEvent {
            seq: g.events.len() as u64 + 1,
            at_s,
            kind,
        };
        if let Err(e) = g.log.append(&LogRecord::Event { event: event.clone() }) {
            tracing::error!(session = %self.info.id, error = %e, "failed to append to session log");
        }
        if let Some(m) = self.message_for(&event.kind, at_s) {
            g.transcript.messages.push(m);
        }
        if matches!(event.kind, EventKind::Closed { .. }) {
            g.status = SessionStatus::Closed;
        }
        g.events.push(event.clone());
        // Nobody listening is fine; the log keeps the event for replay.
        let _ = self.tx.send(event.clone());
        event
    }

    fn record_step(&self, step: StepRecord) {
        self.log(&LogRecord::Step { step: step.clone() });
        self.inner.lock().expect("session lock").transcript.steps.push(step);
    }
}

pub enum Command {
    UserMessage {
        text: String,
        reply: oneshot::Sender<Result<u64, ServiceError>>,
    },
    Close {
        reason: String,
        reply: oneshot::Sender<u64>,
    },
}

/// Handle kept in the registry.
#[derive(Clone)]
pub struct SessionHandle {
    pub shared: Arc<SessionShared>,
    pub commands: mpsc::Sender<Command>,
}

impl SessionHandle {
    pub async fn post(&self, text: String) -> Result<u64, ServiceError> {
        if text.trim().is_empty() {
            return Err(ServiceError::EmptyMessage);
        }
        let (reply, rx) = oneshot::channel();
        self.commands
            .send(Command::UserMessage { text, reply })
            .await
            .map_err(|_| ServiceError::SessionClosed(self.shared.info.id.clone()))?;
        rx.await.map_err(|_| ServiceError::SessionClosed(self.shared.info.id.clone()))?
    }

    pub async fn close(&self, reason: &str) -> Result<u64, ServiceError> {
        let (reply, rx) = oneshot::channel();
        self.commands
            .send(Command::Close {
                reason: reason.into(),
                reply,
            })
            .await
            .map_err(|_| ServiceError::SessionClosed(self.shared.info.id.clone()))?;
        rx.await.map_err(|_| ServiceError::SessionClosed(self.shared.info.id.clone()))
    }
}

/// Maps the session clock onto the monotonic timer.
#[derive(Debug, Clone, Copy)]
pub struct SessionClock {
    origin: Instant,
    base_s: f64,
}

impl SessionClock {
    pub fn new(base_s: f64) -> Self {
        Self {
            origin: Instant::now(),
            base_s,
        }
    }

    pub fn now_s(&self) -> f64 {
        self.base_s + self.origin.elapsed().as_secs_f64()
    }

    pub fn instant_at(&self, t_s: f64) -> Instant {
        self.origin + Duration::from_secs_f64((t_s - self.base_s).max(0.0))
    }
}

struct Pending {
    rec: ScheduledRecord,
    typing_sent: bool,
}

type DecisionResult = Result<Vec<AgentStep>, String>;

enum Wake {
    Command(Option<Command>),
    Decision(DecisionResult),
    Timer,
}

pub struct Actor {
    shared: Arc<SessionShared>,
    rx: mpsc::Receiver<Command>,
    settings: Arc<LiveSettings>,
    backends: SessionBackends,
    state: AgentState,
    clock: SessionClock,
    pending: VecDeque<Pending>,
    decision: Option<JoinHandle<DecisionResult>>,
    /// History changed since the last decision started.
    dirty: bool,
    recheck_at: Option<f64>,
    last_human_seq: Option<u64>,
    rechecked_seq: Option<u64>,
    last_is_human: bool,
    last_activity_s: f64,
    steps_since_human: usize,
    closed: bool,
}

pub struct ActorInit {
    pub shared: Arc<SessionShared>,
    pub settings: Arc<LiveSettings>,
    pub backends: SessionBackends,
    pub state: AgentState,
    pub clock: SessionClock,
    pub pending: Vec<ScheduledRecord>,
    pub typing_announced: bool,
}

/// Starts the actor task and returns its handle.
pub fn spawn(init: ActorInit) -> SessionHandle {
    let (tx, rx) = mpsc::channel(256);
    let shared = init.shared.clone();
    let events = shared.events_after(0);
    let last_human_seq = events
        .iter()
        .rev()
        .find(|e| matches!(e.kind, EventKind::UserMessage { .. }))
        .map(|e| e.seq);
    let last_is_human = match init.state.last_message() {
        Some(m) => m.role != init.state.persona.name,
        None => false,
    };
    let now = init.clock.now_s();
    let pending: VecDeque<Pending> = init
        .pending
        .into_iter()
        .enumerate()
        .map(|(i, rec)| Pending {
            rec,
            typing_sent: i == 0 && init.typing_announced,
        })
        .collect();
    // A decision lost to a restart is retaken when the human spoke last.
    let dirty = pending.is_empty() && last_is_human;
    let last_activity_s = events
        .iter()
        .rev()
        .find(|e| matches!(e.kind, EventKind::UserMessage { .. }))
        .map_or(now, |e| e.at_s);
    let actor = Actor {
        shared: init.shared,
        rx,
        settings: init.settings,
        backends: init.backends,
        state: init.state,
        clock: init.clock,
        pending,
        decision: None,
        dirty,
        recheck_at: None,
        last_human_seq,
        rechecked_seq: None,
        last_is_human,
        last_activity_s,
        steps_since_human: 0,
        closed: false,
    };
    tokio::spawn(actor.run());
    SessionHandle { shared, commands: tx }
}

impl Actor {
    fn agent_role(&self) -> &str {
        &self.shared.info.agent_role
    }

    async fn run(mut self) {
        while !self.closed {
            self.maybe_decide();
            let deadline = self.clock.instant_at(self.next_deadline());
            let deciding = self.decision.is_some();
            let wake = {
                let decision = &mut self.decision;
                let rx = &mut self.rx;
                tokio::select! {
                    cmd = rx.recv() => Wake::Command(cmd),
                    res = async { decision.as_mut().expect("guarded").await }, if deciding => {
                        Wake::Decision(res.unwrap_or_else(|e| Err(format!("decision task failed: {e}"))))
                    }
                    _ = tokio::time::sleep_until(deadline) => Wake::Timer,
                }
            };
            match wake {
                Wake::Command(Some(cmd)) => self.handle(cmd).await,
                Wake::Command(None) => break,
                Wake::Decision(res) => {
                    self.decision = None;
                    self.on_decision(res);
                }
                Wake::Timer => self.on_timer().await,
            }
        }
        if let Some(d) = self.decision.take() {
            d.abort();
        }
    }

    fn next_deadline(&self) -> f64 {
        let mut t = self.last_activity_s + self.settings.inactivity_timeout.as_secs_f64();
        if let Some(p) = self.pending.front() {
            t = t.min(if p.typing_sent { p.rec.deliver_at_s } else { p.rec.typing_at_s });
        }
        if let Some(r) = self.recheck_at {
            t = t.min(r);
        }
        t
    }

    fn maybe_decide(&mut self) {
        if !self.dirty || self.decision.is_some() || !self.pending.is_empty() || self.closed {
            return;
        }
        if self.steps_since_human >= self.settings.max_consecutive_steps {
            self.dirty = false;
            return;
        }
        self.dirty = false;
        self.recheck_at = None;
        let snapshot = self.state.clone();
        let backend = self.backends.agent.clone();
        let settings = self.settings.clone();
        let system = self.shared.info.system;
        self.decision = Some(tokio::spawn(async move {
            match system {
                SystemLabel::S2 | SystemLabel::HumanMixed => {
                    let agent = StepwiseAgent::new(settings.agent.clone(), settings.request.clone());
                    agent
                        .decide(&snapshot, backend.as_ref())
                        .await
                        .map(|s| vec![s])
                        .map_err(|e| e.to_string())
                }
                SystemLabel::Pd | SystemLabel::S1 => {
                    let b = Baselines {
                        cfg: settings.baseline.clone(),
                        agent_cfg: settings.agent.clone(),
                        request: settings.request.clone(),
                    };
                    let res = if system == SystemLabel::Pd {
                        b.pd_generate(&snapshot, backend.as_ref()).await
                    } else {
                        b.s1_generate(&snapshot, backend.as_ref()).await
                    };
                    res.map_err(|e| e.to_string())
                }
            }
        }));
    }

    fn on_decision(&mut self, res: DecisionResult) {
        let now = self.clock.now_s();
        let steps = match res {
            Ok(steps) => steps,
            Err(message) => {
                tracing::warn!(session = %self.shared.info.id, %message, "agent decision failed");
                self.shared.emit(now, EventKind::Error { message });
                return;
            }
        };
        let k_think = self.settings.agent.k_think;
        let mut cursor = now;
        for step in steps {
            self.steps_since_human += 1;
            if step.is_wait() {
                self.shared.record_step(StepRecord {
                    speaker: self.agent_role().to_string(),
                    at: now,
                    step,
                });
                self.shared.emit(
                    now,
                    EventKind::Waiting {
                        role: self.agent_role().to_string(),
                    },
                );
                if self.last_is_human && self.rechecked_seq != self.last_human_seq {
                    self.rechecked_seq = self.last_human_seq;
                    self.recheck_at = Some(now + self.settings.agent.listen_recheck_s);
                }
                continue;
            }
            // Thinking is silent; typing becomes visible afterwards.
            let think_s = (k_think * step.n_think as f64 - step.t_system_s).max(0.0).min(step.delay_s);
            let rec = ScheduledRecord {
                decided_at_s: cursor,
                typing_at_s: cursor + think_s,
                deliver_at_s: cursor + step.delay_s,
                step,
            };
            cursor = rec.deliver_at_s;
            self.shared.log(&LogRecord::Scheduled(rec.clone()));
            self.pending.push_back(Pending { rec, typing_sent: false });
        }
    }

    async fn on_timer(&mut self) {
        let now = self.clock.now_s();
        while let Some(p) = self.pending.front_mut() {
            if !p.typing_sent && now >= p.rec.typing_at_s {
                p.typing_sent = true;
                let delay_s = p.rec.step.delay_s;
                self.shared.emit(
                    now,
                    EventKind::TypingStarted {
                        role: self.shared.info.agent_role.clone(),
                        delay_s,
                    },
                );
            }
            let p = self.pending.front().expect("non-empty");
            if !(p.typing_sent && now >= p.rec.deliver_at_s) {
                break;
            }
            let p = self.pending.pop_front().expect("non-empty");
            self.deliver(p.rec).await;
        }
        if self.recheck_at.is_some_and(|r| now >= r) {
            self.recheck_at = None;
            self.dirty = true;
        }
        if now >= self.last_activity_s + self.settings.inactivity_timeout.as_secs_f64() && self.decision.is_none() {
            self.close("inactive");
        }
    }

    async fn deliver(&mut self, rec: ScheduledRecord) {
        let now = self.clock.now_s();
        let role = self.agent_role().to_string();
        let text = rec.step.response_text().unwrap_or_default().to_string();
        self.shared.record_step(StepRecord {
            speaker: role.clone(),
            at: rec.decided_at_s,
            step: rec.step.clone(),
        });
        self.shared.emit(
            now,
            EventKind::Message {
                role: role.clone(),
                text: text.clone(),
                delay_s: rec.step.delay_s,
            },
        );
        self.last_is_human = false;
        self.observe(Message::new(role, text, now, Origin::Agent)).await;
        // The step-wise agent keeps deciding until it chooses to wait.
        if matches!(self.shared.info.system, SystemLabel::S2 | SystemLabel::HumanMixed) && self.pending.is_empty() {
            self.dirty = true;
        }
    }

    async fn observe(&mut self, msg: Message) {
        let cfg = &self.settings.agent;
        observe_offline(&mut self.state, msg, cfg);
        if !observe_needs_summary(&mut self.state.memory, cfg) {
            return;
        }
        let prompt = summary_prompt(&self.state.memory);
        let req = self.settings.request.request(prompt);
        match self.backends.summarizer.complete(&req).await {
            Ok(r) => {
                let summary = r.text.trim().to_string();
                self.shared.log(&LogRecord::Summary {
                    summary: summary.clone(),
                });
                apply_summary(&mut self.state.memory, summary);
            }
            Err(e) => {
                tracing::warn!(session = %self.shared.info.id, error = %e, "summary refresh failed; retrying later");
            }
        }
    }

    async fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::UserMessage { text, reply } => {
                let now = self.clock.now_s();
                let role = self.shared.info.human_role.clone();
                let event = self.shared.emit(
                    now,
                    EventKind::UserMessage {
                        role: role.clone(),
                        text: text.clone(),
                    },
                );
                let _ = reply.send(Ok(event.seq));
                self.last_human_seq = Some(event.seq);
                self.last_is_human = true;
                self.last_activity_s = now;
                self.steps_since_human = 0;
                self.recheck_at = None;
                self.dirty = true;
                self.observe(Message::new(role, text, now, Origin::Human)).await;
            }
            Command::Close { reason, reply } => {
                let seq = self.close(&reason);
                let _ = reply.send(seq);
            }
        }
    }

    fn close(&mut self, reason: &str) -> u64 {
        self.closed = true;
        if !self.pending.is_empty() {
            tracing::info!(session = %self.shared.info.id, dropped = self.pending.len(), "closing with undelivered messages");
        }
        self.pending.clear();
        let ev = self.shared.emit(
            self.clock.now_s(),
            EventKind::Closed {
                reason: reason.to_string(),
            },
        );
        ev.seq
    }
}
