//! Seed-corpus factory: rewriting, filtering, two-level topic clustering and
//! topic assignment.

mod cluster;
mod convert;
mod filter;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backend::BackendError;

pub use cluster::{
    assign_prompt, assign_topics, cluster_two_level, level1_prompt, level2_prompt, summarize_topics, top_topics_report,
    ClusterOptions, TopicTree,
};
pub use convert::{convert, convert_corpus, parse_rewrite_output, rewrite_prompt, RawRecord};
pub use filter::{filter_corpus, turn_count, FilterReport, FilterThresholds};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("output is not valid JSON: {0}")]
    JsonParse(String),
    #[error("schema error at {path}: {reason}")]
    Schema { path: String, reason: String },
    #[error("{stage}: expected {expected} topic names, got {got}")]
    Cardinality {
        stage: &'static str,
        expected: String,
        got: usize,
    },
    #[error("assignment coverage error: {0}")]
    Coverage(String),
    #[error("empty input")]
    EmptyInput,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// One audit line for a record dropped by a pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub id: String,
    pub stage: String,
    pub reason: String,
}

impl SkipRecord {
    pub fn new(id: impl Into<String>, stage: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            stage: stage.into(),
            reason: reason.into(),
        }
    }
}

/// Parses the JSON value in a model reply, tolerating code fences and
/// surrounding chatter by falling back to the outermost bracketed span.
pub(crate) fn extract_json(text: &str) -> Option<Value> {
    let t = text.trim();
    if let Ok(v) = serde_json::from_str(t) {
        return Some(v);
    }
    for (open, close) in [('{', '}'), ('[', ']')] {
        if let (Some(a), Some(b)) = (t.find(open), t.rfind(close)) {
            if a < b {
                if let Ok(v) = serde_json::from_str(&t[a..=b]) {
                    return Some(v);
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extract_json_variants() {
        assert_eq!(extract_json("[1,2]"), Some(serde_json::json!([1, 2])));
        assert_eq!(
            extract_json("Here you go:\n```json\n{\"a\": 1}\n```"),
            Some(serde_json::json!({"a": 1}))
        );
        assert_eq!(extract_json("nope"), None);
    }
}
