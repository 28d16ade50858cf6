//! HTTP session service: live paced chats with a step-wise (or baseline)
//! agent, persisted as append-only logs, plus the role-identification
//! questionnaire and its tally export.

pub mod error;
pub mod questionnaire;
mod routes;
pub mod session;
pub mod store;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use chrono::{DateTime, Utc};
use stepwise_core::api::{
    AnonymizedMessage, AnonymizedTranscript, CreateSession, SessionCreated, SessionStatus, SessionSummary,
};
use stepwise_core::codec::read_seed_corpus;
use stepwise_core::config::{BackendConfig, Config};
use stepwise_core::{AgentState, ChatBackend, Origin, SeedSample, SystemLabel};

pub use error::ServiceError;
pub use routes::router;
pub use session::{LiveSettings, SessionBackends, SessionHandle};

use questionnaire::{QuestionnaireStore, TranscriptTruth};
use session::{ActorInit, SessionClock, SessionShared};
use store::{agent_side, read_log, replay, CreatedRecord, LogRecord, LogWriter};

/// Supplies the backends of each new or restored session.
pub trait BackendFactory: Send + Sync {
    fn backends(&self, session: &CreatedRecord) -> Result<SessionBackends, ServiceError>;
    fn model_id(&self) -> String;
}

/// Builds backends from a `[backend]` config section. A remote backend is
/// shared by all sessions; scripted ones are built fresh per session since
/// their cursors are stateful.
pub struct ConfigBackendFactory {
    cfg: BackendConfig,
    shared: Option<Arc<dyn ChatBackend>>,
}

impl ConfigBackendFactory {
    pub fn new(cfg: BackendConfig) -> Result<Self, ServiceError> {
        let shared = match cfg.kind {
            stepwise_core::config::BackendKind::Remote => {
                Some(cfg.build().map_err(|e| ServiceError::Backend(e.to_string()))?)
            }
            stepwise_core::config::BackendKind::Scripted => None,
        };
        Ok(Self { cfg, shared })
    }
}

impl BackendFactory for ConfigBackendFactory {
    fn backends(&self, _session: &CreatedRecord) -> Result<SessionBackends, ServiceError> {
        let build = || -> Result<Arc<dyn ChatBackend>, ServiceError> {
            match &self.shared {
                Some(b) => Ok(b.clone()),
                None => self.cfg.build().map_err(|e| ServiceError::Backend(e.to_string())),
            }
        };
        Ok(SessionBackends {
            agent: build()?,
            summarizer: build()?,
        })
    }

    fn model_id(&self) -> String {
        self.cfg.request.model_id.clone()
    }
}

struct AppInner {
    sessions: RwLock<HashMap<String, SessionHandle>>,
    seeds: HashMap<String, SeedSample>,
    seed_order: Vec<String>,
    settings: Arc<LiveSettings>,
    factory: Arc<dyn BackendFactory>,
    sessions_dir: PathBuf,
    questionnaires: Mutex<QuestionnaireStore>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<AppInner>,
}

impl LiveSettings {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            agent: cfg.agent.clone(),
            baseline: cfg.baseline.clone(),
            request: cfg.backend.request.clone(),
            inactivity_timeout: Duration::from_secs_f64(cfg.service.inactivity_timeout_s.max(0.0)),
            max_consecutive_steps: cfg.service.max_consecutive_steps,
            min_human_turns: cfg.service.min_human_turns,
        }
    }
}

fn human_turns(t: &stepwise_core::Transcript) -> usize {
    let mut turns = 0;
    let mut prev_human = false;
    for m in &t.messages {
        let human = m.origin == Origin::Human;
        if human && !prev_human {
            turns += 1;
        }
        prev_human = human;
    }
    turns
}

impl AppState {
    /// Opens the data directory and restores persisted sessions; active ones
    /// get their actors back.
    pub fn open(
        data_dir: impl AsRef<Path>,
        seeds: Vec<SeedSample>,
        settings: LiveSettings,
        factory: Arc<dyn BackendFactory>,
    ) -> Result<Self, ServiceError> {
        let data_dir = data_dir.as_ref();
        let sessions_dir = data_dir.join("sessions");
        std::fs::create_dir_all(&sessions_dir)?;
        let questionnaires = QuestionnaireStore::open(data_dir.join("questionnaires.jsonl"))?;
        let mut seed_map = HashMap::new();
        let mut seed_order = Vec::new();
        for (i, s) in seeds.into_iter().enumerate() {
            let id = s.id.clone().unwrap_or_else(|| (i + 1).to_string());
            seed_order.push(id.clone());
            seed_map.insert(id, s);
        }
        let state = Self {
            inner: Arc::new(AppInner {
                sessions: RwLock::new(HashMap::new()),
                seeds: seed_map,
                seed_order,
                settings: Arc::new(settings),
                factory,
                sessions_dir,
                questionnaires: Mutex::new(questionnaires),
            }),
        };
        state.restore_sessions()?;
        Ok(state)
    }

    /// Builds the state from a config file's sections.
    pub fn from_config(cfg: &Config) -> Result<Self, ServiceError> {
        let seeds = if cfg.service.seeds_path.exists() {
            read_seed_corpus(&cfg.service.seeds_path).map_err(|e| ServiceError::Storage(e.to_string()))?
        } else {
            tracing::warn!(path = %cfg.service.seeds_path.display(), "seed corpus not found; starting with no seeds");
            Vec::new()
        };
        let factory = Arc::new(ConfigBackendFactory::new(cfg.backend.clone())?);
        Self::open(&cfg.service.data_dir, seeds, LiveSettings::from_config(cfg), factory)
    }

    fn restore_sessions(&self) -> Result<(), ServiceError> {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&self.inner.sessions_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        entries.sort();
        for path in entries {
            if let Err(e) = self.restore_one(&path) {
                tracing::error!(path = %path.display(), error = %e, "could not restore session");
            }
        }
        Ok(())
    }

    fn restore_one(&self, path: &Path) -> Result<(), ServiceError> {
        let r = replay(read_log(path)?, &self.inner.settings.agent)?;
        let created_at = DateTime::parse_from_rfc3339(&r.created.created_at)
            .map_err(|e| ServiceError::Storage(e.to_string()))?
            .with_timezone(&Utc);
        let elapsed = (Utc::now() - created_at).to_std().unwrap_or_default().as_secs_f64();
        let base = seed_clock_start(&r.seed) + elapsed;
        let id = r.created.id.clone();
        let shared = Arc::new(SessionShared::new(r.created.clone(), r.seed.clone(), LogWriter::open(path)?));
        shared.restore(r.events, r.steps);
        let handle = if shared.status() == SessionStatus::Active {
            let backends = self.inner.factory.backends(&r.created)?;
            session::spawn(ActorInit {
                shared,
                settings: self.inner.settings.clone(),
                backends,
                state: r.memory,
                clock: SessionClock::new(base),
                pending: r.pending,
                typing_announced: r.typing_announced,
            })
        } else {
            // Closed sessions keep a handle whose command channel is dead.
            let (tx, _) = tokio::sync::mpsc::channel(1);
            SessionHandle { shared, commands: tx }
        };
        tracing::info!(session = %id, "restored session");
        self.inner.sessions.write().expect("registry lock").insert(id, handle);
        Ok(())
    }

    pub fn seed_ids(&self) -> Vec<String> {
        self.inner.seed_order.clone()
    }

    pub fn create_session(&self, req: &CreateSession) -> Result<SessionCreated, ServiceError> {
        let seed = self
            .inner
            .seeds
            .get(&req.seed_id)
            .ok_or_else(|| ServiceError::UnknownSeed(req.seed_id.clone()))?
            .clone();
        if req.system == SystemLabel::HumanMixed {
            return Err(ServiceError::InvalidRequest("system must be PD, S1 or S2".into()));
        }
        let human_role = req.human_role.clone().unwrap_or_else(|| seed.characters[0].name.clone());
        let side = agent_side(&seed, &human_role)
            .ok_or_else(|| ServiceError::InvalidRequest(format!("`{human_role}` is not a character of the seed")))?;
        let agent_role = seed.persona(side).name.clone();
        let id = uuid::Uuid::new_v4().simple().to_string();
        let created = CreatedRecord {
            id: id.clone(),
            seed_id: req.seed_id.clone(),
            seed: CreatedRecord::new_seed_value(&seed),
            system: req.system,
            model_id: self.inner.factory.model_id(),
            human_role: human_role.clone(),
            agent_role: agent_role.clone(),
            ai_slot: if rand::random_bool(0.5) { 1 } else { 2 },
            created_at: Utc::now().to_rfc3339(),
        };
        let backends = self.inner.factory.backends(&created)?;
        let state = AgentState::from_seed(&seed, side, &self.inner.settings.agent)
            .map_err(|e| ServiceError::InvalidRequest(e.to_string()))?;
        let mut log = LogWriter::open(self.inner.sessions_dir.join(format!("{id}.jsonl")))?;
        log.append(&LogRecord::Created(created.clone()))?;
        let shared = Arc::new(SessionShared::new(created, seed.clone(), log));
        let handle = session::spawn(ActorInit {
            shared,
            settings: self.inner.settings.clone(),
            backends,
            state,
            clock: SessionClock::new(seed_clock_start(&seed)),
            pending: Vec::new(),
            typing_announced: false,
        });
        self.inner.sessions.write().expect("registry lock").insert(id.clone(), handle);
        Ok(SessionCreated {
            id,
            human_role,
            agent_role,
        })
    }

    pub fn session(&self, id: &str) -> Result<SessionHandle, ServiceError> {
        self.inner
            .sessions
            .read()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    pub fn summary(&self, id: &str) -> Result<SessionSummary, ServiceError> {
        let h = self.session(id)?;
        let info = &h.shared.info;
        let t = h.shared.transcript();
        let turns = human_turns(&t);
        Ok(SessionSummary {
            id: info.id.clone(),
            seed_id: info.seed_id.clone(),
            system: info.system,
            model_id: info.model_id.clone(),
            status: h.shared.status(),
            created_at: info.created_at.clone(),
            human_role: info.human_role.clone(),
            agent_role: info.agent_role.clone(),
            messages: t.messages.len(),
            human_turns: turns,
            low_quality: turns < self.inner.settings.min_human_turns,
        })
    }

    pub fn list_sessions(&self) -> Vec<SessionSummary> {
        let mut ids: Vec<String> = self.inner.sessions.read().expect("registry lock").keys().cloned().collect();
        ids.sort();
        ids.iter().filter_map(|id| self.summary(id).ok()).collect()
    }

    /// Dialogue with speakers renamed to `Role 1`/`Role 2`.
    pub fn anonymized(&self, id: &str) -> Result<AnonymizedTranscript, ServiceError> {
        let h = self
            .session(id)
            .map_err(|_| ServiceError::UnknownTranscript(id.to_string()))?;
        let info = &h.shared.info;
        let t = h.shared.transcript();
        let label = |role: &str| {
            let is_ai = role == info.agent_role;
            if is_ai == (info.ai_slot == 1) {
                "Role 1"
            } else {
                "Role 2"
            }
        };
        Ok(AnonymizedTranscript {
            id: id.to_string(),
            messages: t
                .full_history()
                .map(|m| AnonymizedMessage {
                    role: label(&m.role).to_string(),
                    content: m.content.clone(),
                    timestamp: m.timestamp,
                })
                .collect(),
        })
    }

    fn truth(&self, id: &str) -> Option<TranscriptTruth> {
        let h = self.session(id).ok()?;
        Some(TranscriptTruth {
            ai_role: h.shared.info.ai_slot,
            system: h.shared.info.system,
            model_id: h.shared.info.model_id.clone(),
        })
    }

    pub fn submit_questionnaire(&self, q: &stepwise_core::api::Questionnaire) -> Result<(), ServiceError> {
        let mut store = self.inner.questionnaires.lock().expect("questionnaire lock");
        store.submit(q, |id| self.truth(id))
    }

    pub fn export_roleid(&self) -> stepwise_core::api::RoleIdExport {
        self.inner.questionnaires.lock().expect("questionnaire lock").export()
    }
}

/// The session clock continues from the last seed message.
fn seed_clock_start(seed: &SeedSample) -> f64 {
    seed.recent_conversations.last().map_or(0.0, |m| m.timestamp)
}

/// Binds and serves until ctrl-c.
pub async fn serve(state: AppState, bind: &str) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
