//! In-context rewriting of persona-chat records into step-by-step seeds.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{extract_json, PipelineError, SkipRecord};
use crate::backend::{ChatBackend, RequestDefaults};
use crate::dialogue::{Message, Persona, SeedSample};
use crate::prompts;

/// One persona-chat style record: two persona lists and alternating utterances
/// (the first utterance belongs to persona 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    #[serde(default)]
    pub id: Option<String>,
    pub persona1: Vec<String>,
    pub persona2: Vec<String>,
    pub conversation: Vec<String>,
}

impl RawRecord {
    fn render_personas(&self) -> String {
        format!(
            "Persona 1: {}\nPersona 2: {}",
            self.persona1.join(". "),
            self.persona2.join(". ")
        )
    }

    fn render_conversation(&self) -> String {
        self.conversation
            .iter()
            .enumerate()
            .map(|(i, u)| format!("Persona {}: {}", i % 2 + 1, u))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Deserialize)]
struct Example {
    personas: Value,
    conversation: Vec<String>,
    output: Value,
}

fn render_examples() -> Vec<String> {
    let examples: Vec<Example> = serde_json::from_str(prompts::REWRITE_EXAMPLES).expect("bundled examples parse");
    examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let p1 = ex.personas["persona1"].as_array().cloned().unwrap_or_default();
            let p2 = ex.personas["persona2"].as_array().cloned().unwrap_or_default();
            let join = |v: &[Value]| v.iter().filter_map(Value::as_str).collect::<Vec<_>>().join(". ");
            let rec = RawRecord {
                id: None,
                persona1: vec![join(&p1)],
                persona2: vec![join(&p2)],
                conversation: ex.conversation.clone(),
            };
            format!(
                "Example {}:\nInput:\n{}\n{}\nOutput:\n{}\n",
                i + 1,
                rec.render_personas(),
                rec.render_conversation(),
                serde_json::to_string_pretty(&ex.output).expect("json")
            )
        })
        .collect()
}

pub fn rewrite_prompt(record: &RawRecord) -> String {
    let ex = render_examples();
    let personas = record.render_personas();
    let conversation = record.render_conversation();
    prompts::fill(
        prompts::REWRITE,
        &[
            ("<|EXAMPLE1|>", &ex[0]),
            ("<|EXAMPLE2|>", &ex[1]),
            ("<|EXAMPLE3|>", &ex[2]),
            ("<|EXAMPLE4|>", &ex[3]),
            ("<|EXAMPLE5|>", &ex[4]),
            ("<|PERSONAS|>", &personas),
            ("<|CONVERSATION|>", &conversation),
        ],
    )
}

/// Seconds represented by a model-written timestamp. Numbers pass through;
/// strings may be `HH:MM[:SS]`, `YYYY-MM-DD HH:MM[:SS]` or RFC 3339.
fn timestamp_seconds(v: &Value) -> Option<f64> {
    if let Some(n) = v.as_f64() {
        return Some(n);
    }
    let s = v.as_str()?.trim();
    if let Ok(n) = s.parse::<f64>() {
        return Some(n);
    }
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp() as f64);
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M:%S", "%Y/%m/%d %H:%M:%S"] {
        if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp() as f64);
        }
    }
    for fmt in ["%H:%M:%S", "%H:%M", "%I:%M %p", "%I:%M:%S %p"] {
        if let Ok(t) = chrono::NaiveTime::parse_from_str(s, fmt) {
            use chrono::Timelike;
            return Some(t.num_seconds_from_midnight() as f64);
        }
    }
    None
}

fn schema(path: impl Into<String>, reason: impl Into<String>) -> PipelineError {
    PipelineError::Schema {
        path: path.into(),
        reason: reason.into(),
    }
}

/// Decodes the rewriting model's JSON into a seed. Character entries may use
/// `name`, `name1` or `name2`. Timestamps are made relative to the first
/// message; a clock-time rollover past midnight adds a day.
pub fn parse_rewrite_output(text: &str) -> Result<SeedSample, PipelineError> {
    let v = extract_json(text).ok_or_else(|| PipelineError::JsonParse("no JSON object in output".into()))?;
    let obj = v.as_object().ok_or_else(|| schema("$", "expected an object"))?;
    let topic = obj
        .get("topic")
        .and_then(Value::as_str)
        .ok_or_else(|| schema("$.topic", "missing or not a string"))?
        .trim()
        .to_string();
    let chars = obj
        .get("characters")
        .and_then(Value::as_array)
        .ok_or_else(|| schema("$.characters", "missing or not an array"))?;
    if chars.len() != 2 {
        return Err(schema("$.characters", format!("expected 2 characters, found {}", chars.len())));
    }
    let mut personas = Vec::with_capacity(2);
    for (i, c) in chars.iter().enumerate() {
        let path = format!("$.characters[{i}]");
        let name = ["name", "name1", "name2"]
            .iter()
            .find_map(|k| c.get(*k).and_then(Value::as_str))
            .ok_or_else(|| schema(format!("{path}.name"), "missing"))?;
        let personality = match c.get("personality") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Array(items)) => items.iter().filter_map(Value::as_str).collect::<Vec<_>>().join(". "),
            _ => return Err(schema(format!("{path}.personality"), "missing")),
        };
        personas.push(Persona::new(name.trim(), personality.trim()));
    }
    let convs = obj
        .get("recent_conversations")
        .and_then(Value::as_array)
        .ok_or_else(|| schema("$.recent_conversations", "missing or not an array"))?;
    let mut messages = Vec::with_capacity(convs.len());
    let mut base: Option<f64> = None;
    let mut day_offset = 0.0;
    let mut prev_raw = f64::NEG_INFINITY;
    for (i, m) in convs.iter().enumerate() {
        let path = format!("$.recent_conversations[{i}]");
        let role = m
            .get("role")
            .and_then(Value::as_str)
            .ok_or_else(|| schema(format!("{path}.role"), "missing"))?;
        let content = m
            .get("content")
            .and_then(Value::as_str)
            .ok_or_else(|| schema(format!("{path}.content"), "missing"))?;
        let raw = m
            .get("timestamp")
            .and_then(timestamp_seconds)
            .ok_or_else(|| schema(format!("{path}.timestamp"), "unrecognized timestamp"))?;
        let clock_only = m.get("timestamp").and_then(Value::as_str).is_some_and(|s| {
            let s = s.trim();
            s.len() <= 11 && s.contains(':') && !s.contains('-')
        });
        if clock_only && raw < prev_raw {
            day_offset += 86_400.0;
        }
        prev_raw = raw;
        let abs = raw + day_offset;
        let b = *base.get_or_insert(abs);
        messages.push(Message::seed(role.trim(), content.trim(), abs - b));
    }
    let [a, b]: [Persona; 2] = personas.try_into().expect("two personas");
    let seed = SeedSample {
        id: None,
        topic,
        characters: [a, b],
        recent_conversations: messages,
        assigned_topic: None,
    };
    seed.check().map_err(|e| match e.split_once(": ") {
        Some((p, r)) => schema(p, r),
        None => schema("$", e),
    })?;
    Ok(seed)
}

/// Converts one record, retrying unparsable or invalid output up to `retry_budget` times.
pub async fn convert(
    record: &RawRecord,
    backend: &dyn ChatBackend,
    request: &RequestDefaults,
    retry_budget: u32,
) -> Result<SeedSample, PipelineError> {
    let prompt = rewrite_prompt(record);
    let req = request.request(prompt);
    let mut attempt = 0;
    loop {
        let result = backend.complete(&req).await;
        let err = match result {
            Ok(r) => match parse_rewrite_output(&r.text) {
                Ok(mut seed) => {
                    seed.id = record.id.clone();
                    return Ok(seed);
                }
                Err(e) => e,
            },
            Err(e) => PipelineError::Backend(e),
        };
        if attempt >= retry_budget {
            return Err(err);
        }
        attempt += 1;
    }
}

/// Converts a corpus; failed records are skipped and logged.
pub async fn convert_corpus(
    records: &[RawRecord],
    backend: &dyn ChatBackend,
    request: &RequestDefaults,
    retry_budget: u32,
    parallelism: usize,
) -> (Vec<SeedSample>, Vec<SkipRecord>) {
    use futures::stream::{self, StreamExt};
    let results: Vec<_> = stream::iter(records.iter().enumerate())
        .map(|(i, r)| async move { (i, convert(r, backend, request, retry_budget).await) })
        .buffered(parallelism.max(1))
        .collect()
        .await;
    let mut seeds = Vec::new();
    let mut skips = Vec::new();
    for (i, res) in results {
        let id = records[i].id.clone().unwrap_or_else(|| (i + 1).to_string());
        match res {
            Ok(mut s) => {
                s.id = Some(id);
                seeds.push(s);
            }
            Err(e) => skips.push(SkipRecord::new(id, "convert", e.to_string())),
        }
    }
    (seeds, skips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;

    fn record() -> RawRecord {
        RawRecord {
            id: Some("r1".into()),
            persona1: vec!["i like gardening".into(), "i have a cat".into()],
            persona2: vec!["i am a chef".into()],
            conversation: vec!["hi! do you garden?".into(), "no, i cook all day".into()],
        }
    }

    const VALID: &str = r#"{
      "topic": "Gardening and cooking hobbies",
      "characters": [
        {"name1": "Alex", "personality": "i like gardening. i have a cat"},
        {"name2": "Sam", "personality": "i am a chef"}
      ],
      "recent_conversations": [
        {"timestamp": "2024-05-01 10:00:00", "role": "Alex", "content": "hi!"},
        {"timestamp": "2024-05-01 10:00:05", "role": "Alex", "content": "do you garden?"},
        {"timestamp": "2024-05-01 10:01:10", "role": "Sam", "content": "no"},
        {"timestamp": "2024-05-01 10:01:14", "role": "Sam", "content": "i cook all day"}
      ]
    }"#;

    #[tokio::test]
    async fn converts_valid_output() {
        let b = ScriptedBackend::new([format!("```json\n{VALID}\n```")], 0.0);
        let seed = convert(&record(), &b, &RequestDefaults::default(), 0).await.unwrap();
        assert!(seed.topic.split_whitespace().count() <= 10);
        assert_eq!(seed.names(), ["Alex", "Sam"]);
        let ts: Vec<f64> = seed.recent_conversations.iter().map(|m| m.timestamp).collect();
        assert_eq!(ts, [0.0, 5.0, 70.0, 74.0]);
        assert_eq!(seed.id.as_deref(), Some("r1"));
        let prompt = &b.prompts()[0];
        assert!(prompt.contains("Here are 5 examples:\n\nExample 1:"));
        assert!(prompt.contains("Example 5:"));
        assert!(prompt.contains("Persona 1: i like gardening. i have a cat"));
        assert!(!prompt.contains("<|"));
    }

    #[tokio::test]
    async fn non_json_twice_with_budget_one_is_skipped() {
        let b = ScriptedBackend::new(["sorry, I can't", "still not json"], 0.0);
        let (seeds, skips) = convert_corpus(&[record()], &b, &RequestDefaults::default(), 1, 1).await;
        assert!(seeds.is_empty());
        assert_eq!(skips.len(), 1);
        assert_eq!(skips[0].stage, "convert");
        assert_eq!(b.consumed(), 2);
    }

    #[test]
    fn foreign_role_is_schema_error() {
        let bad = VALID.replacen("\"role\": \"Sam\"", "\"role\": \"Zoe\"", 1);
        match parse_rewrite_output(&bad) {
            Err(PipelineError::Schema { path, .. }) => assert_eq!(path, "$.recent_conversations[2].role"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn clock_times_roll_over_midnight() {
        let text = r#"{"topic":"late chat","characters":[{"name":"A","personality":"x"},{"name":"B","personality":"y"}],
          "recent_conversations":[{"timestamp":"23:59","role":"A","content":"night"},{"timestamp":"00:01","role":"B","content":"gn"}]}"#;
        let s = parse_rewrite_output(text).unwrap();
        assert_eq!(s.recent_conversations[1].timestamp, 120.0);
    }
}
