use serde::{Deserialize, Serialize};

use crate::dialogue::{Message, SeedSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterThresholds {
    pub min_turns: usize,
    pub max_turns: usize,
    pub min_messages: usize,
    pub max_messages: usize,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            min_turns: 6,
            max_turns: 8,
            min_messages: 25,
            max_messages: 40,
        }
    }
}

impl FilterThresholds {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_turns > self.max_turns || self.min_messages > self.max_messages {
            return Err(format!("invalid thresholds {self:?}"));
        }
        Ok(())
    }

    /// Parses `min_turns-max_turns/min_messages-max_messages`, e.g. `6-8/25-40`.
    pub fn parse(s: &str) -> Result<Self, String> {
        let err = || format!("expected TURNS_MIN-TURNS_MAX/MSGS_MIN-MSGS_MAX, got `{s}`");
        let (turns, msgs) = s.split_once('/').ok_or_else(err)?;
        let range = |r: &str| -> Result<(usize, usize), String> {
            let (a, b) = r.split_once('-').ok_or_else(err)?;
            Ok((a.trim().parse().map_err(|_| err())?, b.trim().parse().map_err(|_| err())?))
        };
        let (min_turns, max_turns) = range(turns)?;
        let (min_messages, max_messages) = range(msgs)?;
        let th = Self {
            min_turns,
            max_turns,
            min_messages,
            max_messages,
        };
        th.validate()?;
        Ok(th)
    }
}

/// Number of maximal same-role runs.
pub fn turn_count(messages: &[Message]) -> usize {
    if messages.is_empty() {
        return 0;
    }
    1 + messages.windows(2).filter(|w| w[0].role != w[1].role).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub total: usize,
    pub turn_pass: usize,
    pub both_pass: usize,
}

pub fn filter_corpus(seeds: &[SeedSample], th: &FilterThresholds) -> (Vec<SeedSample>, FilterReport) {
    let mut report = FilterReport {
        total: seeds.len(),
        turn_pass: 0,
        both_pass: 0,
    };
    let mut kept = Vec::new();
    for s in seeds {
        let turns = turn_count(&s.recent_conversations);
        if !(th.min_turns..=th.max_turns).contains(&turns) {
            continue;
        }
        report.turn_pass += 1;
        let n = s.recent_conversations.len();
        if (th.min_messages..=th.max_messages).contains(&n) {
            report.both_pass += 1;
            kept.push(s.clone());
        }
    }
    (kept, report)
}
