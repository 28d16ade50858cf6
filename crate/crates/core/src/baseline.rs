//! Comparison systems: punctuation-segmented dialogue (PD) and one-shot
//! delimiter-separated generation (S1). Both use a flat per-character delay
//! and never wait.

use serde::{Deserialize, Serialize};

use crate::agent::{render_with, AgentConfig, AgentError, AgentState};
use crate::backend::{ChatBackend, RequestDefaults};
use crate::dialogue::{char_count, AgentStep};
use crate::prompts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub char_delay_s: f64,
    pub delimiter: String,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            char_delay_s: 0.3,
            delimiter: "[newline]".into(),
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if !(self.char_delay_s >= 0.0) {
            return Err(AgentError::InvalidConfig("char_delay_s must be >= 0".into()));
        }
        if self.delimiter.is_empty() {
            return Err(AgentError::InvalidConfig("delimiter must be non-empty".into()));
        }
        Ok(())
    }

    pub fn step_for(&self, fragment: &str) -> AgentStep {
        let mut step = AgentStep::respond("", fragment);
        // Nanosecond grid, so decimal per-char rates give the decimal delay
        // (3 chars at 0.3 s is 0.9, not 0.8999999999999999).
        step.delay_s = (self.char_delay_s * char_count(fragment) as f64 * 1e9).round() / 1e9;
        step
    }
}

fn is_sentence_end(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Splits after each run of `.`, `!` or `?` that is followed by whitespace or
/// the end of the text. Fragments are trimmed; empty ones are dropped.
pub fn split_sentences(reply: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = reply.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !is_sentence_end(c) {
            continue;
        }
        let mut end = i + c.len_utf8();
        while let Some(&(j, d)) = chars.peek() {
            if !is_sentence_end(d) {
                break;
            }
            end = j + d.len_utf8();
            chars.next();
        }
        let boundary = match chars.peek() {
            None => true,
            Some(&(_, d)) => d.is_whitespace(),
        };
        if boundary {
            out.push(reply[start..end].to_string());
            start = end;
        }
    }
    out.push(reply[start..].to_string());
    out.into_iter()
        .map(|f| f.trim().to_string())
        .filter(|f| !f.is_empty())
        .collect()
}

/// Splits on the delimiter token, trimming fragments and dropping empty ones.
pub fn split_delimited(reply: &str, delimiter: &str) -> Vec<String> {
    reply
        .split(delimiter)
        .map(str::trim)
        .filter(|f| !f.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn pd_steps(reply: &str, cfg: &BaselineConfig) -> Vec<AgentStep> {
    split_sentences(reply).iter().map(|f| cfg.step_for(f)).collect()
}

pub fn s1_steps(reply: &str, cfg: &BaselineConfig) -> Vec<AgentStep> {
    split_delimited(reply, &cfg.delimiter)
        .iter()
        .map(|f| cfg.step_for(f))
        .collect()
}

/// Renders the baseline prompts. History windowing follows the agent config.
#[derive(Debug, Clone, Default)]
pub struct Baselines {
    pub cfg: BaselineConfig,
    pub agent_cfg: AgentConfig,
    pub request: RequestDefaults,
}

impl Baselines {
    pub fn pd_prompt(&self, state: &AgentState) -> Result<String, AgentError> {
        render_with(prompts::PD, state, &self.agent_cfg, &[])
    }

    pub fn s1_prompt(&self, state: &AgentState) -> Result<String, AgentError> {
        render_with(prompts::S1, state, &self.agent_cfg, &[("<|DELIMITER|>", &self.cfg.delimiter)])
    }

    /// One long reply split at sentence punctuation.
    pub async fn pd_generate(&self, state: &AgentState, backend: &dyn ChatBackend) -> Result<Vec<AgentStep>, AgentError> {
        let prompt = self.pd_prompt(state)?;
        let reply = backend.complete(&self.request.request(prompt)).await?;
        Ok(pd_steps(&reply.text, &self.cfg))
    }

    /// One reply holding several delimiter-separated messages.
    pub async fn s1_generate(&self, state: &AgentState, backend: &dyn ChatBackend) -> Result<Vec<AgentStep>, AgentError> {
        let prompt = self.s1_prompt(state)?;
        let reply = backend.complete(&self.request.request(prompt)).await?;
        Ok(s1_steps(&reply.text, &self.cfg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;
    use crate::dialogue::{Message, Persona};

    fn texts(steps: &[AgentStep]) -> Vec<&str> {
        steps.iter().map(|s| s.response_text().unwrap()).collect()
    }

    fn delays(steps: &[AgentStep]) -> Vec<f64> {
        steps.iter().map(|s| s.delay_s).collect()
    }

    #[test]
    fn pd_examples() {
        let cfg = BaselineConfig::default();
        let s = pd_steps("Hi! How are you? Good.", &cfg);
        assert_eq!(texts(&s), ["Hi!", "How are you?", "Good."]);
        assert_eq!(delays(&s), [0.9, 3.6, 1.5]);
        assert_eq!(texts(&pd_steps("no punctuation here", &cfg)), ["no punctuation here"]);
        assert_eq!(texts(&pd_steps("A!!! B.", &cfg)), ["A!!!", "B."]);
    }

    #[test]
    fn pd_keeps_inline_dots() {
        assert_eq!(split_sentences("it costs 3.50 now. ok"), ["it costs 3.50 now.", "ok"]);
        assert_eq!(split_sentences("wait...what? yes"), ["wait...what?", "yes"]);
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn s1_examples() {
        let cfg = BaselineConfig::default();
        let s = s1_steps("hey[newline]long day?", &cfg);
        assert_eq!(texts(&s), ["hey", "long day?"]);
        assert_eq!(delays(&s), [0.9, 2.7]);
        assert_eq!(texts(&s1_steps("just one message", &cfg)), ["just one message"]);
        assert_eq!(texts(&s1_steps("[newline][newline]hi", &cfg)), ["hi"]);
    }

    #[tokio::test]
    async fn generate_uses_one_call_and_never_waits() {
        let mut state = AgentState::new(Persona::new("Sam", "nurse"), "Alex", "work").unwrap();
        state.memory.short_term.push(Message::seed("Alex", "how was work", 0.0));
        let b = Baselines::default();
        let backend = ScriptedBackend::new(["Long day. Really long! You?", "ok[newline]bye"], 0.0);
        let pd = b.pd_generate(&state, &backend).await.unwrap();
        assert_eq!(texts(&pd), ["Long day.", "Really long!", "You?"]);
        let s1 = b.s1_generate(&state, &backend).await.unwrap();
        assert_eq!(texts(&s1), ["ok", "bye"]);
        assert!(pd.iter().chain(s1.iter()).all(|s| !s.is_wait() && s.think.is_empty()));
        let prompts = backend.prompts();
        assert!(!prompts[0].contains("<think>"));
        assert!(prompts[1].contains("[newline]"));
    }
}
