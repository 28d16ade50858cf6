//! The step-wise send/wait agent.
//!
//! Each call to [`StepwiseAgent::decide`] asks the backend for exactly one
//! tagged step and fills in its display delay
//! `max(0, k_think * n_think + k_type * n_response - t_system)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, RequestDefaults};
use crate::dialogue::{AgentStep, Memory, Message, Persona, SeedSample, Side};
use crate::prompts;
use crate::step::{parse_step, MalformedOutput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Seconds per think character.
    pub k_think: f64,
    /// Seconds per response character.
    pub k_type: f64,
    /// Raw messages kept in short-term memory.
    pub n_short: usize,
    /// Messages between summary refreshes.
    pub k_summarize: usize,
    /// Extra model calls allowed when the output is malformed.
    pub retry_budget: u32,
    /// Live mode: idle seconds after which a waiting agent re-decides.
    pub listen_recheck_s: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            k_think: 0.02,
            k_type: 0.2,
            n_short: 20,
            k_summarize: 10,
            retry_budget: 2,
            listen_recheck_s: 8.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.to_string()));
        if !(self.k_think >= 0.0) {
            return bad("k_think must be >= 0");
        }
        if !(self.k_type >= 0.0) {
            return bad("k_type must be >= 0");
        }
        if self.n_short < 1 {
            return bad("n_short must be >= 1");
        }
        if self.k_summarize < 1 {
            return bad("k_summarize must be >= 1");
        }
        if !(self.listen_recheck_s >= 0.0) {
            return bad("listen_recheck_s must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("no dialogue history or summary to condition on")]
    EmptyContext,
    #[error("history is empty")]
    EmptyHistory,
    #[error("model output malformed after {attempts} attempt(s): {last}")]
    Malformed { attempts: u32, last: MalformedOutput },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error("persona name equals partner name `{0}`")]
    SameName(String),
}

/// Display delay in seconds for one step.
pub fn compute_delay(n_think: usize, n_response: usize, t_system_s: f64, cfg: &AgentConfig) -> f64 {
    let raw = cfg.k_think * n_think as f64 + cfg.k_type * n_response as f64 - t_system_s;
    raw.max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub persona: Persona,
    pub partner_name: String,
    pub topic: String,
    pub memory: Memory,
}

impl AgentState {
    pub fn new(persona: Persona, partner_name: impl Into<String>, topic: impl Into<String>) -> Result<Self, AgentError> {
        let partner_name = partner_name.into();
        if persona.name == partner_name {
            return Err(AgentError::SameName(partner_name));
        }
        Ok(Self {
            persona,
            partner_name,
            topic: topic.into(),
            memory: Memory::default(),
        })
    }

    /// State for the speaker on `side`, with the seed history loaded: the
    /// latest `n_short` messages go to short-term memory and older ones wait
    /// in the pending buffer for the first summary refresh.
    pub fn from_seed(seed: &SeedSample, side: Side, cfg: &AgentConfig) -> Result<Self, AgentError> {
        let me = seed.persona(side).clone();
        let partner = seed.persona(side.other()).name.clone();
        let mut state = Self::new(me, partner, seed.topic.clone())?;
        let history = &seed.recent_conversations;
        let split = history.len().saturating_sub(cfg.n_short);
        state.memory.pending = history[..split].to_vec();
        state.memory.short_term = history[split..].to_vec();
        Ok(state)
    }

    pub fn last_message(&self) -> Option<&Message> {
        self.memory.short_term.last()
    }
}

/// Agent prompt text for `state`.
pub fn render_prompt(state: &AgentState, cfg: &AgentConfig) -> Result<String, AgentError> {
    render_with(prompts::AGENT, state, cfg, &[])
}

pub(crate) fn render_with(
    template: &str,
    state: &AgentState,
    cfg: &AgentConfig,
    extra: &[(&str, &str)],
) -> Result<String, AgentError> {
    if state.memory.is_empty() {
        return Err(AgentError::EmptyContext);
    }
    let st = &state.memory.short_term;
    let recent = &st[st.len().saturating_sub(cfg.n_short)..];
    let mut history = String::new();
    let summary = state.memory.long_term_summary.trim();
    if !summary.is_empty() {
        history.push_str("Summary of the earlier conversation: ");
        history.push_str(summary);
        if !recent.is_empty() {
            history.push('\n');
        }
    }
    history.push_str(&prompts::history_lines(recent));
    let mut vars: Vec<(&str, &str)> = vec![
        ("<|HISTORY|>", &history),
        ("<|NAME1|>", &state.partner_name),
        ("<|NAME2|>", &state.persona.name),
        ("<|PERSONALITY2|>", &state.persona.personality),
        ("<|TOPIC|>", &state.topic),
    ];
    vars.extend_from_slice(extra);
    Ok(prompts::fill(template, &vars))
}

/// The step-wise agent: configuration plus request defaults.
#[derive(Debug, Clone, Default)]
pub struct StepwiseAgent {
    pub cfg: AgentConfig,
    pub request: RequestDefaults,
}

impl StepwiseAgent {
    pub fn new(cfg: AgentConfig, request: RequestDefaults) -> Self {
        Self { cfg, request }
    }

    pub fn render_prompt(&self, state: &AgentState) -> Result<String, AgentError> {
        render_prompt(state, &self.cfg)
    }

    /// One send/wait decision. Malformed outputs are retried up to
    /// `retry_budget` times; `t_system_s` sums all attempts.
    pub async fn decide(&self, state: &AgentState, backend: &dyn ChatBackend) -> Result<AgentStep, AgentError> {
        let prompt = self.render_prompt(state)?;
        let req = self.request.request(prompt);
        let mut t_system = 0.0;
        let mut attempts = 0;
        loop {
            attempts += 1;
            let result = backend.complete(&req).await?;
            t_system += result.t_system_s;
            match parse_step(&result.text) {
                Ok(mut step) => {
                    step.t_system_s = t_system;
                    step.delay_s = compute_delay(step.n_think, step.n_response, t_system, &self.cfg);
                    return Ok(step);
                }
                Err(last) => {
                    tracing::debug!(attempts, %last, "malformed step output");
                    if attempts > self.cfg.retry_budget {
                        return Err(AgentError::Malformed { attempts, last });
                    }
                }
            }
        }
    }

    /// Appends `msg` to memory and refreshes the long-term summary every
    /// `k_summarize` messages. On summarizer failure the message stays
    /// appended and the counter is left untouched so the next message retries.
    pub async fn observe(&self, state: &mut AgentState, msg: Message, backend: &dyn ChatBackend) -> Result<(), AgentError> {
        observe_offline(state, msg, &self.cfg);
        if state.memory.messages_since_summary < self.cfg.k_summarize {
            return Ok(());
        }
        if state.memory.pending.is_empty() {
            state.memory.messages_since_summary = 0;
            return Ok(());
        }
        let summary = self.summarize(&state.memory, backend).await?;
        apply_summary(&mut state.memory, summary);
        Ok(())
    }

    async fn summarize(&self, memory: &Memory, backend: &dyn ChatBackend) -> Result<String, AgentError> {
        let prompt = summary_prompt(memory);
        let result = backend.complete(&self.request.request(prompt)).await?;
        Ok(result.text.trim().to_string())
    }

    /// Persona descriptors for `name` inferred from the history.
    pub async fn infer_persona(
        &self,
        name: &str,
        history: &[Message],
        backend: &dyn ChatBackend,
    ) -> Result<Persona, AgentError> {
        if history.is_empty() {
            return Err(AgentError::EmptyHistory);
        }
        let lines = prompts::history_lines(history);
        let prompt = prompts::fill(prompts::PERSONA, &[("<|NAME|>", name), ("<|HISTORY|>", &lines)]);
        let result = backend.complete(&self.request.request(prompt)).await?;
        Ok(Persona::new(name, result.text.trim()))
    }
}

/// Memory bookkeeping of `observe` without the summarizer call.
pub fn observe_offline(state: &mut AgentState, msg: Message, cfg: &AgentConfig) {
    let mem = &mut state.memory;
    mem.short_term.push(msg);
    if mem.short_term.len() > cfg.n_short {
        let overflow = mem.short_term.len() - cfg.n_short;
        mem.pending.extend(mem.short_term.drain(..overflow));
    }
    mem.messages_since_summary += 1;
}

/// Installs a fresh summary and clears the pending buffer.
pub fn apply_summary(memory: &mut Memory, summary: String) {
    memory.long_term_summary = summary;
    memory.pending.clear();
    memory.messages_since_summary = 0;
}

pub fn summary_prompt(memory: &Memory) -> String {
    let records = prompts::history_lines(&memory.pending);
    prompts::fill(
        prompts::SUMMARIZE,
        &[
            ("<|EXISTING_SUMMARY|>", memory.long_term_summary.as_str()),
            ("<|CONVERSATIONS|>", &records),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ScriptedBackend, ScriptedReply};
    use crate::dialogue::Action;

    fn msg(role: &str, content: &str, t: f64) -> Message {
        Message::seed(role, content, t)
    }

    fn state() -> AgentState {
        AgentState::new(Persona::new("Sam", "i love hiking"), "Alex", "gardening").unwrap()
    }

    fn agent(cfg: AgentConfig) -> StepwiseAgent {
        StepwiseAgent::new(cfg, RequestDefaults::default())
    }

    #[test]
    fn delay_hand_values() {
        let cfg = AgentConfig::default();
        assert!((compute_delay(100, 50, 2.0, &cfg) - 10.0).abs() < 1e-12);
        assert_eq!(compute_delay(0, 0, 5.0, &cfg), 0.0);
        assert!((compute_delay(10, 0, 0.0, &cfg) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn prompt_contains_instruction_block_and_history() {
        let mut s = state();
        s.memory.short_term.push(msg("Alex", "my tomatoes died", 0.0));
        let p = render_prompt(&s, &AgentConfig::default()).unwrap();
        assert!(p.starts_with("Chat History:\nAlex: my tomatoes died\n\nTask:\n"));
        assert!(p.contains(
            "You are Sam, and your persona is \"i love hiking\". You are chatting with your friend Alex on WeChat about \"gardening\"."
        ));
        assert!(p.contains("\"Who sent the last message in the chat history?"));
        assert!(p.contains("<wait> wait </wait>"));
        assert!(!p.contains("<|"));
    }

    #[test]
    fn prompt_needs_context() {
        assert!(matches!(render_prompt(&state(), &AgentConfig::default()), Err(AgentError::EmptyContext)));
        let mut s = state();
        s.memory.long_term_summary = "they met at a bar".into();
        let p = render_prompt(&s, &AgentConfig::default()).unwrap();
        assert!(p.contains("Summary of the earlier conversation: they met at a bar"));
    }

    #[test]
    fn prompt_shows_only_latest_n_short() {
        let mut s = state();
        for i in 0..25 {
            s.memory.short_term.push(msg("Alex", &format!("line-{i:02}"), i as f64));
        }
        let p = render_prompt(&s, &AgentConfig::default()).unwrap();
        let rendered = p.lines().filter(|l| l.starts_with("Alex: line-")).count();
        assert_eq!(rendered, 20);
        assert!(!p.contains("line-04") && p.contains("line-05") && p.contains("line-24"));
    }

    #[tokio::test]
    async fn decide_passes_wait_through() {
        let mut s = state();
        s.memory.short_term.push(msg("Alex", "ugh", 0.0));
        let b = ScriptedBackend::new(["<think>let her vent<\\think> <wait>wait<\\wait>"], 0.0);
        let step = agent(AgentConfig::default()).decide(&s, &b).await.unwrap();
        assert_eq!(step.action, Action::Wait);
        assert!((step.delay_s - 0.02 * 12.0).abs() < 1e-12);
    }

    #[tokio::test]
    async fn decide_retries_malformed_output() {
        let mut s = state();
        s.memory.short_term.push(msg("Alex", "hi", 0.0));
        let b = ScriptedBackend::new(["garbage", "also garbage", "<think>t</think><response>hey</response>"], 0.25);
        let step = agent(AgentConfig::default()).decide(&s, &b).await.unwrap();
        assert_eq!(step.action, Action::Respond("hey".into()));
        assert_eq!(b.consumed(), 3);
        assert!((step.t_system_s - 0.75).abs() < 1e-12);

        let b = ScriptedBackend::new(["x", "y", "z", "<think>t</think><response>late</response>"], 0.0);
        let err = agent(AgentConfig::default()).decide(&s, &b).await.unwrap_err();
        assert!(matches!(err, AgentError::Malformed { attempts: 3, .. }));
    }

    #[tokio::test]
    async fn decide_propagates_backend_errors() {
        let mut s = state();
        s.memory.short_term.push(msg("Alex", "hi", 0.0));
        let b = ScriptedBackend::new(Vec::<String>::new(), 0.0);
        let err = agent(AgentConfig::default()).decide(&s, &b).await.unwrap_err();
        assert!(matches!(err, AgentError::Backend(BackendError::QueueExhausted { .. })));
    }

    #[tokio::test]
    async fn observe_trace_with_summaries() {
        let cfg = AgentConfig {
            n_short: 3,
            k_summarize: 2,
            ..Default::default()
        };
        let a = agent(cfg);
        let mut s = state();
        let b = ScriptedBackend::constant("S");
        for i in 0..5 {
            a.observe(&mut s, msg("Alex", &format!("m{i}"), i as f64), &b).await.unwrap();
        }
        let contents: Vec<&str> = s.memory.short_term.iter().map(|m| m.content.as_str()).collect();
        assert_eq!(contents, ["m2", "m3", "m4"]);
        assert_eq!(s.memory.long_term_summary, "S");
        // m0 was summarized at the fourth message; m1 is pending.
        assert_eq!(s.memory.pending.len(), 1);
        assert_eq!(s.memory.messages_since_summary, 1);
        // Only the fourth message had anything to summarize.
        assert_eq!(b.consumed(), 1);
        assert!(b.prompts()[0].contains("Recent conversation records:\nAlex: m0"));
    }

    #[tokio::test]
    async fn first_message_into_empty_state() {
        let a = agent(AgentConfig::default());
        let mut s = state();
        let b = ScriptedBackend::new(Vec::<String>::new(), 0.0);
        a.observe(&mut s, msg("Alex", "hello", 0.0), &b).await.unwrap();
        assert_eq!(s.memory.short_term.len(), 1);
        assert_eq!(s.memory.long_term_summary, "");
        assert_eq!(b.consumed(), 0);
    }

    #[tokio::test]
    async fn summarizer_failure_keeps_message_and_counter() {
        let cfg = AgentConfig {
            n_short: 1,
            k_summarize: 2,
            ..Default::default()
        };
        let a = agent(cfg);
        let mut s = state();
        let b = ScriptedBackend::new(
            [
                ScriptedReply::Fail(BackendError::Transport {
                    attempts: 1,
                    message: "down".into(),
                }),
                "recovered".into(),
            ],
            0.0,
        );
        a.observe(&mut s, msg("Alex", "a", 0.0), &b).await.unwrap();
        assert!(a.observe(&mut s, msg("Alex", "b", 1.0), &b).await.is_err());
        assert_eq!(s.memory.short_term.last().unwrap().content, "b");
        assert_eq!(s.memory.long_term_summary, "");
        assert_eq!(s.memory.messages_since_summary, 2);
        a.observe(&mut s, msg("Alex", "c", 2.0), &b).await.unwrap();
        assert_eq!(s.memory.long_term_summary, "recovered");
        assert_eq!(s.memory.messages_since_summary, 0);
    }

    #[tokio::test]
    async fn infer_persona_passthrough() {
        let a = agent(AgentConfig::default());
        let b = ScriptedBackend::new(["loves gardening. retired teacher"], 0.0);
        let p = a
            .infer_persona("Alex", &[msg("Alex", "my roses are blooming", 0.0)], &b)
            .await
            .unwrap();
        assert_eq!(p, Persona::new("Alex", "loves gardening. retired teacher"));
        assert!(matches!(
            a.infer_persona("Alex", &[], &b).await,
            Err(AgentError::EmptyHistory)
        ));
    }

    #[test]
    fn from_seed_splits_history() {
        let seed = SeedSample {
            id: None,
            topic: "t".into(),
            characters: [Persona::new("A", "x"), Persona::new("B", "y")],
            recent_conversations: (0..5).map(|i| msg(if i % 2 == 0 { "A" } else { "B" }, "m", i as f64)).collect(),
            assigned_topic: None,
        };
        let cfg = AgentConfig {
            n_short: 3,
            ..Default::default()
        };
        let s = AgentState::from_seed(&seed, Side::B, &cfg).unwrap();
        assert_eq!(s.persona.name, "B");
        assert_eq!(s.partner_name, "A");
        assert_eq!(s.memory.short_term.len(), 3);
        assert_eq!(s.memory.pending.len(), 2);
    }

    #[test]
    fn config_validation() {
        assert!(AgentConfig::default().validate().is_ok());
        let bad = AgentConfig {
            n_short: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
