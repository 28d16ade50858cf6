//! Append-only JSONL session logs and their replay.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use stepwise_core::agent::{apply_summary, observe_offline};
use stepwise_core::api::{EventKind, SessionEvent};
use stepwise_core::codec::{seed_from_value, seed_to_value};
use stepwise_core::dialogue::StepRecord;
use stepwise_core::{AgentConfig, AgentState, AgentStep, Memory, SeedSample, Side, SystemLabel};

use crate::error::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedRecord {
    pub id: String,
    pub seed_id: String,
    pub seed: Value,
    pub system: SystemLabel,
    pub model_id: String,
    pub human_role: String,
    pub agent_role: String,
    /// Which anonymized label (1 or 2) the agent gets in rater views.
    pub ai_slot: u8,
    pub created_at: String,
}

impl CreatedRecord {
    pub fn seed(&self) -> Result<SeedSample, ServiceError> {
        seed_from_value(&self.seed).map_err(|e| ServiceError::Storage(e.to_string()))
    }

    pub fn new_seed_value(seed: &SeedSample) -> Value {
        seed_to_value(seed)
    }
}

/// A message whose display delay is running.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledRecord {
    pub step: AgentStep,
    pub decided_at_s: f64,
    pub typing_at_s: f64,
    pub deliver_at_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Created(CreatedRecord),
    Event { event: SessionEvent },
    Step { step: StepRecord },
    Scheduled(ScheduledRecord),
    Summary { summary: String },
}

pub struct LogWriter {
    file: File,
    path: PathBuf,
}

impl LogWriter {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { file, path })
    }

    pub fn append(&mut self, rec: &LogRecord) -> Result<(), ServiceError> {
        let mut line = serde_json::to_string(rec).map_err(|e| ServiceError::Storage(e.to_string()))?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRecord>, ServiceError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(rec) => out.push(rec),
            // A torn final line from a crash mid-write is dropped.
            Err(e) => {
                tracing::warn!(path = %path.display(), line = i + 1, error = %e, "skipping unreadable log line");
            }
        }
    }
    Ok(out)
}

/// Memory bookkeeping after one observed message. Returns true when a
/// summary refresh is due; resets the counter when there is nothing to
/// summarize.
pub fn observe_needs_summary(memory: &mut Memory, cfg: &AgentConfig) -> bool {
    if memory.messages_since_summary < cfg.k_summarize {
        return false;
    }
    if memory.pending.is_empty() {
        memory.messages_since_summary = 0;
        return false;
    }
    true
}

/// State of a session rebuilt from its log.
pub struct Replayed {
    pub created: CreatedRecord,
    pub seed: SeedSample,
    pub events: Vec<SessionEvent>,
    pub steps: Vec<StepRecord>,
    pub memory: AgentState,
    /// Scheduled deliveries not yet delivered, oldest first.
    pub pending: Vec<ScheduledRecord>,
    /// Whether the oldest pending delivery already announced its typing phase.
    pub typing_announced: bool,
}

pub fn replay(records: Vec<LogRecord>, cfg: &AgentConfig) -> Result<Replayed, ServiceError> {
    let mut iter = records.into_iter();
    let created = match iter.next() {
        Some(LogRecord::Created(c)) => c,
        _ => return Err(ServiceError::Storage("log does not start with a created record".into())),
    };
    let seed = created.seed()?;
    let side = seed
        .side_of(&created.agent_role)
        .ok_or_else(|| ServiceError::Storage(format!("agent role `{}` not in seed", created.agent_role)))?;
    let mut memory = AgentState::from_seed(&seed, side, cfg).map_err(|e| ServiceError::Storage(e.to_string()))?;
    let mut events = Vec::new();
    let mut steps = Vec::new();
    let mut scheduled = Vec::new();
    let (mut delivered, mut typing) = (0usize, 0usize);
    for rec in iter {
        match rec {
            LogRecord::Created(_) => return Err(ServiceError::Storage("duplicate created record".into())),
            LogRecord::Event { event } => {
                let msg = match &event.kind {
                    EventKind::UserMessage { role, text } => {
                        Some(stepwise_core::Message::new(role, text, event.at_s, stepwise_core::Origin::Human))
                    }
                    EventKind::Message { role, text, .. } => {
                        delivered += 1;
                        Some(stepwise_core::Message::new(role, text, event.at_s, stepwise_core::Origin::Agent))
                    }
                    EventKind::TypingStarted { .. } => {
                        typing += 1;
                        None
                    }
                    _ => None,
                };
                if let Some(m) = msg {
                    observe_offline(&mut memory, m, cfg);
                    observe_needs_summary(&mut memory.memory, cfg);
                }
                events.push(event);
            }
            LogRecord::Step { step } => steps.push(step),
            LogRecord::Scheduled(s) => scheduled.push(s),
            LogRecord::Summary { summary } => apply_summary(&mut memory.memory, summary),
        }
    }
    let pending: Vec<ScheduledRecord> = scheduled.into_iter().skip(delivered).collect();
    Ok(Replayed {
        created,
        seed,
        events,
        steps,
        memory,
        typing_announced: typing > delivered && !pending.is_empty(),
        pending,
    })
}

/// Side of the seed played by the agent.
pub fn agent_side(seed: &SeedSample, human_role: &str) -> Option<Side> {
    seed.side_of(human_role).map(Side::other)
}
