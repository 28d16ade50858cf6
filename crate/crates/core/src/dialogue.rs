//! Domain types shared by every part of the crate.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Where a message came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Seed,
    Agent,
    Human,
}

impl Origin {
    pub fn is_seed(&self) -> bool {
        matches!(self, Origin::Seed)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Origin::Seed => "seed",
            Origin::Agent => "agent",
            Origin::Human => "human",
        }
    }
}

/// One chat bubble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub timestamp: f64,
    pub role: String,
    pub content: String,
    #[serde(default, skip_serializing_if = "Origin::is_seed")]
    pub origin: Origin,
}

impl Message {
    pub fn new(role: impl Into<String>, content: impl Into<String>, timestamp: f64, origin: Origin) -> Self {
        Self {
            timestamp,
            role: role.into(),
            content: content.into(),
            origin,
        }
    }

    pub fn seed(role: impl Into<String>, content: impl Into<String>, timestamp: f64) -> Self {
        Self::new(role, content, timestamp, Origin::Seed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub name: String,
    pub personality: String,
}

impl Persona {
    pub fn new(name: impl Into<String>, personality: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            personality: personality.into(),
        }
    }
}

/// Two personas with a topic and a starting history.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeedSample {
    pub id: Option<String>,
    pub topic: String,
    pub characters: [Persona; 2],
    pub recent_conversations: Vec<Message>,
    pub assigned_topic: Option<String>,
}

impl Default for Persona {
    fn default() -> Self {
        Persona::new("", "")
    }
}

impl SeedSample {
    pub fn names(&self) -> [&str; 2] {
        [&self.characters[0].name, &self.characters[1].name]
    }

    /// Index of the persona with the given name.
    pub fn side_of(&self, role: &str) -> Option<Side> {
        if self.characters[0].name == role {
            Some(Side::A)
        } else if self.characters[1].name == role {
            Some(Side::B)
        } else {
            None
        }
    }

    pub fn persona(&self, side: Side) -> &Persona {
        &self.characters[side.index()]
    }

    /// Checks the invariants a seed must satisfy; the returned string names
    /// the offending location.
    pub fn check(&self) -> Result<(), String> {
        for (i, p) in self.characters.iter().enumerate() {
            if p.name.trim().is_empty() {
                return Err(format!("$.characters[{i}].name: empty"));
            }
            if p.personality.trim().is_empty() {
                return Err(format!("$.characters[{i}].personality: empty"));
            }
        }
        if self.characters[0].name == self.characters[1].name {
            return Err("$.characters: both personas share a name".into());
        }
        check_messages(&self.recent_conversations, "recent_conversations", Some(self.names()))
    }
}

pub(crate) fn check_messages(messages: &[Message], field: &str, names: Option<[&str; 2]>) -> Result<(), String> {
    let mut last = f64::NEG_INFINITY;
    for (i, m) in messages.iter().enumerate() {
        if m.content.trim().is_empty() {
            return Err(format!("$.{field}[{i}].content: empty"));
        }
        if !(m.timestamp.is_finite() && m.timestamp >= 0.0) {
            return Err(format!("$.{field}[{i}].timestamp: must be a non-negative number"));
        }
        if m.timestamp < last {
            return Err(format!("$.{field}[{i}].timestamp: decreases"));
        }
        last = m.timestamp;
        if let Some(names) = names {
            if !names.contains(&m.role.as_str()) {
                return Err(format!("$.{field}[{i}].role: `{}` is not one of the characters", m.role));
            }
        }
    }
    Ok(())
}

/// One of the two speakers in a dialogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::A => 0,
            Side::B => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Respond(String),
    Wait,
}

/// One policy step with its think trace and display delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStep {
    pub think: String,
    pub action: Action,
    pub n_think: usize,
    pub n_response: usize,
    pub delay_s: f64,
    #[serde(default)]
    pub t_system_s: f64,
}

impl AgentStep {
    pub fn new(think: impl Into<String>, action: Action) -> Self {
        let think = think.into();
        let n_think = char_count(&think);
        let n_response = match &action {
            Action::Respond(text) => char_count(text),
            Action::Wait => 0,
        };
        Self {
            think,
            action,
            n_think,
            n_response,
            delay_s: 0.0,
            t_system_s: 0.0,
        }
    }

    pub fn respond(think: impl Into<String>, text: impl Into<String>) -> Self {
        Self::new(think, Action::Respond(text.into()))
    }

    pub fn wait(think: impl Into<String>) -> Self {
        Self::new(think, Action::Wait)
    }

    pub fn response_text(&self) -> Option<&str> {
        match &self.action {
            Action::Respond(t) => Some(t),
            Action::Wait => None,
        }
    }

    pub fn is_wait(&self) -> bool {
        matches!(self.action, Action::Wait)
    }
}

/// Character count in Unicode scalar values.
pub fn char_count(s: &str) -> usize {
    s.chars().count()
}

/// Short/long-term memory of one agent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Memory {
    pub short_term: Vec<Message>,
    pub long_term_summary: String,
    pub messages_since_summary: usize,
    /// Messages evicted from short-term memory and not yet folded into the summary.
    pub pending: Vec<Message>,
}

impl Memory {
    pub fn is_empty(&self) -> bool {
        self.short_term.is_empty() && self.long_term_summary.trim().is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum SystemLabel {
    #[serde(rename = "PD")]
    Pd,
    #[serde(rename = "S1")]
    S1,
    #[serde(rename = "S2")]
    S2,
    #[serde(rename = "Human-mixed")]
    HumanMixed,
}

impl SystemLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            SystemLabel::Pd => "PD",
            SystemLabel::S1 => "S1",
            SystemLabel::S2 => "S2",
            SystemLabel::HumanMixed => "Human-mixed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pd" => Some(SystemLabel::Pd),
            "s1" => Some(SystemLabel::S1),
            "s2" => Some(SystemLabel::S2),
            "human-mixed" | "human_mixed" | "humanmixed" => Some(SystemLabel::HumanMixed),
            _ => None,
        }
    }
}

impl fmt::Display for SystemLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An [`AgentStep`] tagged with the speaker that produced it and the virtual
/// (or wall-clock) time at which the decision was taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub speaker: String,
    pub at: f64,
    #[serde(flatten)]
    pub step: AgentStep,
}

/// Remaining-time bookkeeping for one floor window, kept for auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub holder: Side,
    pub window_s: f64,
    /// Remaining time after each step of the window.
    pub remaining: Vec<f64>,
    pub end: WindowEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowEnd {
    /// The holder chose to wait.
    Wait,
    /// Remaining time reached zero.
    Exhausted,
    /// A baseline finished its precomputed message list.
    Finished,
    /// The per-window step cap was hit.
    StepCap,
}

/// Simulation metadata recorded alongside generated transcripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMeta {
    pub rng_algorithm: String,
    pub rng_seed: u64,
    pub rng_stream: u64,
    pub windows: Vec<WindowRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub seed: SeedSample,
    pub messages: Vec<Message>,
    pub steps: Vec<StepRecord>,
    pub system: SystemLabel,
    pub meta: Option<SimMeta>,
}

impl Transcript {
    pub fn new(seed: SeedSample, system: SystemLabel) -> Self {
        Self {
            seed,
            messages: Vec::new(),
            steps: Vec::new(),
            system,
            meta: None,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        self.seed.check()?;
        check_messages(&self.messages, "messages", None)?;
        if let (Some(last_seed), Some(first)) = (self.seed.recent_conversations.last(), self.messages.first()) {
            if first.timestamp < last_seed.timestamp {
                return Err("$.messages[0].timestamp: earlier than the seed history".into());
            }
        }
        // Every agent message is backed by exactly one respond step, in order.
        let agent_msgs: Vec<&Message> = self.messages.iter().filter(|m| m.origin == Origin::Agent).collect();
        let responds: Vec<&StepRecord> = self.steps.iter().filter(|s| !s.step.is_wait()).collect();
        if agent_msgs.len() != responds.len() {
            return Err(format!(
                "$.steps: {} respond steps for {} agent messages",
                responds.len(),
                agent_msgs.len()
            ));
        }
        for (i, (m, s)) in agent_msgs.iter().zip(responds.iter()).enumerate() {
            if m.role != s.speaker || s.step.response_text() != Some(m.content.as_str()) {
                return Err(format!("$.steps: respond step {i} does not match its agent message"));
            }
        }
        Ok(())
    }

    /// Seed history followed by the generated messages.
    pub fn full_history(&self) -> impl Iterator<Item = &Message> {
        self.seed.recent_conversations.iter().chain(self.messages.iter())
    }
}
