//! Wire types of the chat service HTTP API, shared by server and client.

use serde::{Deserialize, Serialize};

use crate::dialogue::SystemLabel;
use crate::metrics::judge::RoleAnswer;
use crate::metrics::RoleIdTally;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub seed_id: String,
    #[serde(default = "default_system")]
    pub system: SystemLabel,
    /// Character played by the human; defaults to the first character.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_role: Option<String>,
}

fn default_system() -> SystemLabel {
    SystemLabel::S2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub id: String,
    pub human_role: String,
    pub agent_role: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostMessage {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub ok: bool,
    /// Sequence number of the event the request produced, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub seed_id: String,
    pub system: SystemLabel,
    pub model_id: String,
    pub status: SessionStatus,
    pub created_at: String,
    pub human_role: String,
    pub agent_role: String,
    pub messages: usize,
    /// Runs of consecutive human messages.
    pub human_turns: usize,
    /// Fewer human turns than the configured minimum.
    pub low_quality: bool,
}

/// One entry of a session's ordered event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    /// Seconds on the session clock, which continues the seed history.
    pub at_s: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    UserMessage { role: String, text: String },
    /// The typing phase of a scheduled message has begun.
    TypingStarted { role: String, delay_s: f64 },
    Message { role: String, text: String, delay_s: f64 },
    /// The agent decided to keep listening.
    Waiting { role: String },
    Closed { reason: String },
    Error { message: String },
}

impl EventKind {
    /// SSE event name.
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::UserMessage { .. } => "user_message",
            EventKind::TypingStarted { .. } => "typing_started",
            EventKind::Message { .. } => "message",
            EventKind::Waiting { .. } => "waiting",
            EventKind::Closed { .. } => "closed",
            EventKind::Error { .. } => "error",
        }
    }
}

/// A dialogue with speakers renamed to `Role 1` and `Role 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnonymizedTranscript {
    pub id: String,
    pub messages: Vec<AnonymizedMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnonymizedMessage {
    pub role: String,
    pub content: String,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Questionnaire {
    pub id: String,
    pub rater_id: String,
    pub answers: Vec<QuestionnaireAnswer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireAnswer {
    pub transcript_id: String,
    pub answer: RoleAnswer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleIdGroup {
    pub system: SystemLabel,
    pub model_id: String,
    pub tally: RoleIdTally,
    pub pass_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleIdExport {
    pub groups: Vec<RoleIdGroup>,
    pub overall: RoleIdTally,
    pub overall_pass_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}
