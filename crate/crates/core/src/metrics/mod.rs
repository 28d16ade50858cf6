//! Dialogue statistics: Distinct-N, words per message, average consecutive
//! message count (ACMC), run-length and reply-interval distributions, and the
//! role-identification pass rate.
//!
//! Tokens are lowercased whitespace-separated words with punctuation kept.
//! N-grams are pooled over messages but never span a message boundary.

pub mod judge;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{Message, Transcript};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no messages")]
    EmptyInput,
    #[error("tally has zero total")]
    ZeroTotal,
    #[error("tally does not add up: {0:?}")]
    InconsistentTally(RoleIdTally),
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Unique n-grams over total n-grams; 0 when there is no n-gram at all.
pub fn distinct_n<'a>(texts: impl IntoIterator<Item = &'a str>, n: usize) -> f64 {
    assert!(n >= 1, "n must be >= 1");
    let mut seen = std::collections::HashSet::new();
    let mut total = 0usize;
    for text in texts {
        let toks = tokenize(text);
        for gram in toks.windows(n) {
            total += 1;
            seen.insert(gram.to_vec());
        }
    }
    if total == 0 {
        0.0
    } else {
        seen.len() as f64 / total as f64
    }
}

pub fn words_per_message<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<f64, MetricsError> {
    let (mut words, mut n) = (0usize, 0usize);
    for t in texts {
        words += t.split_whitespace().count();
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::EmptyInput);
    }
    Ok(words as f64 / n as f64)
}

/// Lengths of maximal same-role runs, in order.
pub fn run_lengths<S: AsRef<str>>(roles: &[S]) -> Vec<usize> {
    let mut runs: Vec<usize> = Vec::new();
    for (i, r) in roles.iter().enumerate() {
        if i > 0 && roles[i - 1].as_ref() == r.as_ref() {
            *runs.last_mut().expect("run open") += 1;
        } else {
            runs.push(1);
        }
    }
    runs
}

/// Mean run length: total messages over number of runs.
pub fn acmc<S: AsRef<str>>(roles: &[S]) -> Result<f64, MetricsError> {
    if roles.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(roles.len() as f64 / run_lengths(roles).len() as f64)
}

/// Normalized histogram of run lengths.
pub fn run_histogram(runs: &[usize]) -> BTreeMap<usize, f64> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &r in runs {
        *counts.entry(r).or_default() += 1;
    }
    let total = runs.len() as f64;
    counts.into_iter().map(|(k, c)| (k, c as f64 / total)).collect()
}

pub fn run_distribution<S: AsRef<str>>(roles: &[S]) -> BTreeMap<usize, f64> {
    run_histogram(&run_lengths(roles))
}

/// Reply latencies: for each message sent right after a partner's message,
/// the gap to that partner message. With `responder`, only that role's replies.
pub fn reply_intervals(messages: &[Message], responder: Option<&str>) -> Vec<f64> {
    messages
        .windows(2)
        .filter(|w| w[0].role != w[1].role)
        .filter(|w| responder.is_none_or(|r| w[1].role == r))
        .map(|w| w[1].timestamp - w[0].timestamp)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntervalBuckets {
    pub width_s: f64,
    pub cap_s: f64,
}

impl Default for IntervalBuckets {
    fn default() -> Self {
        Self {
            width_s: 2.0,
            cap_s: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo: f64,
    /// `None` for the overflow bucket.
    pub hi: Option<f64>,
    pub proportion: f64,
}

/// Fixed-width buckets `[0,w), [w,2w), ...` up to `cap_s`, then one overflow
/// bucket. Empty input gives an empty histogram.
pub fn interval_histogram(intervals: &[f64], buckets: &IntervalBuckets) -> Vec<Bucket> {
    if intervals.is_empty() {
        return Vec::new();
    }
    let n = (buckets.cap_s / buckets.width_s).ceil() as usize;
    let mut counts = vec![0usize; n + 1];
    for &x in intervals {
        let i = if x >= buckets.cap_s {
            n
        } else {
            ((x.max(0.0) / buckets.width_s).floor() as usize).min(n - 1)
        };
        counts[i] += 1;
    }
    let total = intervals.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| Bucket {
            lo: i as f64 * buckets.width_s,
            hi: if i < n {
                Some(((i + 1) as f64 * buckets.width_s).min(buckets.cap_s))
            } else {
                None
            },
            proportion: c as f64 / total,
        })
        .collect()
}

pub fn interval_distribution(messages: &[Message], buckets: &IntervalBuckets) -> Vec<Bucket> {
    interval_histogram(&reply_intervals(messages, None), buckets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub buckets: IntervalBuckets,
    /// Count the seed history as well as generated messages.
    pub include_seed: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            buckets: IntervalBuckets::default(),
            include_seed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub messages: usize,
    pub distinct_n: BTreeMap<usize, f64>,
    pub words_per_message: f64,
    pub acmc: f64,
    pub run_histogram: BTreeMap<usize, f64>,
    pub interval_histogram: Vec<Bucket>,
    pub mean_reply_interval_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub transcripts: usize,
    #[serde(flatten)]
    pub overall: GroupMetrics,
    /// Breakdown by message origin (`agent`, `human`, `seed`).
    pub per_origin: BTreeMap<String, GroupMetrics>,
}

/// Metrics over one group of messages; `runs` are the run lengths that belong
/// to the group and `intervals` the reply latencies of its messages.
fn group_metrics(texts: &[&str], runs: &[usize], intervals: &[f64], buckets: &IntervalBuckets) -> GroupMetrics {
    let total_in_runs: usize = runs.iter().sum();
    GroupMetrics {
        messages: texts.len(),
        distinct_n: (2..=6).map(|n| (n, distinct_n(texts.iter().copied(), n))).collect(),
        words_per_message: words_per_message(texts.iter().copied()).unwrap_or(0.0),
        acmc: if runs.is_empty() {
            0.0
        } else {
            total_in_runs as f64 / runs.len() as f64
        },
        run_histogram: if runs.is_empty() { BTreeMap::new() } else { run_histogram(runs) },
        interval_histogram: interval_histogram(intervals, buckets),
        mean_reply_interval_s: if intervals.is_empty() {
            None
        } else {
            Some(intervals.iter().sum::<f64>() / intervals.len() as f64)
        },
    }
}

impl MetricsReport {
    pub fn from_transcripts(transcripts: &[Transcript], cfg: &MetricsConfig) -> Self {
        let mut texts: Vec<&str> = Vec::new();
        let mut runs: Vec<usize> = Vec::new();
        let mut intervals: Vec<f64> = Vec::new();
        let mut by_origin: BTreeMap<&'static str, (Vec<&str>, Vec<usize>, Vec<f64>)> = BTreeMap::new();
        for t in transcripts {
            let msgs: Vec<&Message> = if cfg.include_seed {
                t.full_history().collect()
            } else {
                t.messages.iter().collect()
            };
            let owned: Vec<Message> = msgs.iter().map(|m| (*m).clone()).collect();
            let roles: Vec<&str> = msgs.iter().map(|m| m.role.as_str()).collect();
            let lens = run_lengths(&roles);
            let mut start = 0;
            for len in &lens {
                let origin = msgs[start].origin;
                by_origin.entry(origin.as_str()).or_default().1.push(*len);
                start += len;
            }
            for (i, m) in msgs.iter().enumerate() {
                texts.push(&m.content);
                let entry = by_origin.entry(m.origin.as_str()).or_default();
                entry.0.push(&m.content);
                if i > 0 && msgs[i - 1].role != m.role {
                    let gap = m.timestamp - msgs[i - 1].timestamp;
                    entry.2.push(gap);
                }
            }
            runs.extend(lens);
            intervals.extend(reply_intervals(&owned, None));
        }
        Self {
            transcripts: transcripts.len(),
            overall: group_metrics(&texts, &runs, &intervals, &cfg.buckets),
            per_origin: by_origin
                .into_iter()
                .map(|(o, (t, r, i))| (o.to_string(), group_metrics(&t, &r, &i, &cfg.buckets)))
                .collect(),
        }
    }
}

/// Outcome of one role-identification judgment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judgment {
    Correct,
    Error,
    Unclear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoleIdTally {
    pub n_error: u64,
    pub n_unclear: u64,
    pub n_correct: u64,
    pub n_total: u64,
}

impl RoleIdTally {
    pub fn new(n_error: u64, n_unclear: u64, n_correct: u64) -> Self {
        Self {
            n_error,
            n_unclear,
            n_correct,
            n_total: n_error + n_unclear + n_correct,
        }
    }

    pub fn record(&mut self, j: Judgment) {
        match j {
            Judgment::Correct => self.n_correct += 1,
            Judgment::Error => self.n_error += 1,
            Judgment::Unclear => self.n_unclear += 1,
        }
        self.n_total += 1;
    }

    pub fn merge(&mut self, other: &RoleIdTally) {
        self.n_error += other.n_error;
        self.n_unclear += other.n_unclear;
        self.n_correct += other.n_correct;
        self.n_total += other.n_total;
    }

    pub fn is_closed(&self) -> bool {
        self.n_error + self.n_unclear + self.n_correct == self.n_total
    }
}

/// Share of judgments that were wrong or unclear.
pub fn pass_rate(t: &RoleIdTally) -> Result<f64, MetricsError> {
    if !t.is_closed() {
        return Err(MetricsError::InconsistentTally(*t));
    }
    if t.n_total == 0 {
        return Err(MetricsError::ZeroTotal);
    }
    Ok((t.n_error + t.n_unclear) as f64 / t.n_total as f64)
}
