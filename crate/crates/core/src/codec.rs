//! JSON transcript and seed-corpus files.
//!
//! A transcript is one JSON object per `.json` file; corpora are `.jsonl`
//! with one seed object per line. Field names follow the rewriting schema
//! (`topic`, `characters[].name/personality`, `recent_conversations[]`
//! with `timestamp/role/content`), plus `messages`, `steps`, `system` and
//! an optional `meta` block for generated transcripts.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::dialogue::{Message, Origin, Persona, SeedSample, SimMeta, StepRecord, SystemLabel, Transcript};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error at {path}: {reason}")]
    Schema { path: String, reason: String },
}

impl CodecError {
    pub(crate) fn schema(path: impl Into<String>, reason: impl Into<String>) -> Self {
        CodecError::Schema {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// JSON path of a schema error, e.g. `$.topic`.
    pub fn json_path(&self) -> Option<&str> {
        match self {
            CodecError::Schema { path, .. } => Some(path),
            CodecError::Io { .. } => None,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        CodecError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

type Result<T> = std::result::Result<T, CodecError>;

fn field<'a>(obj: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| CodecError::schema(format!("{path}.{key}"), "missing field"))
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| CodecError::schema(path, "expected an object"))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| CodecError::schema(path, "expected an array"))
}

fn as_str<'a>(v: &'a Value, path: &str) -> Result<&'a str> {
    v.as_str().ok_or_else(|| CodecError::schema(path, "expected a string"))
}

fn str_field(obj: &Map<String, Value>, path: &str, key: &str) -> Result<String> {
    let v = field(obj, path, key)?;
    Ok(as_str(v, &format!("{path}.{key}"))?.to_string())
}

fn opt_str_field(obj: &Map<String, Value>, path: &str, key: &str) -> Result<Option<String>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => Ok(Some(as_str(v, &format!("{path}.{key}"))?.to_string())),
    }
}

fn typed<T: DeserializeOwned>(v: &Value, path: &str) -> Result<T> {
    serde_json::from_value(v.clone()).map_err(|e| CodecError::schema(path, e.to_string()))
}

pub(crate) fn decode_message(v: &Value, path: &str) -> Result<Message> {
    let obj = as_object(v, path)?;
    let ts = field(obj, path, "timestamp")?;
    let timestamp = ts
        .as_f64()
        .ok_or_else(|| CodecError::schema(format!("{path}.timestamp"), "expected a number"))?;
    let origin = match obj.get("origin") {
        None => Origin::Seed,
        Some(v) => typed(v, &format!("{path}.origin"))?,
    };
    Ok(Message {
        timestamp,
        role: str_field(obj, path, "role")?,
        content: str_field(obj, path, "content")?,
        origin,
    })
}

fn decode_messages(obj: &Map<String, Value>, path: &str, key: &str) -> Result<Vec<Message>> {
    let p = format!("{path}.{key}");
    as_array(field(obj, path, key)?, &p)?
        .iter()
        .enumerate()
        .map(|(i, v)| decode_message(v, &format!("{p}[{i}]")))
        .collect()
}

fn decode_persona(v: &Value, path: &str) -> Result<Persona> {
    let obj = as_object(v, path)?;
    Ok(Persona {
        name: str_field(obj, path, "name")?,
        personality: str_field(obj, path, "personality")?,
    })
}

fn decode_seed_fields(obj: &Map<String, Value>) -> Result<SeedSample> {
    let path = "$";
    let id = match obj.get("id") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Number(n)) => Some(n.to_string()),
        Some(_) => return Err(CodecError::schema("$.id", "expected a string or number")),
    };
    let topic = str_field(obj, path, "topic")?;
    let chars = as_array(field(obj, path, "characters")?, "$.characters")?;
    if chars.len() != 2 {
        return Err(CodecError::schema(
            "$.characters",
            format!("expected exactly 2 characters, found {}", chars.len()),
        ));
    }
    let characters = [
        decode_persona(&chars[0], "$.characters[0]")?,
        decode_persona(&chars[1], "$.characters[1]")?,
    ];
    let recent_conversations = decode_messages(obj, path, "recent_conversations")?;
    Ok(SeedSample {
        id,
        topic,
        characters,
        recent_conversations,
        assigned_topic: opt_str_field(obj, path, "assigned_topic")?,
    })
}

/// Decodes and validates a seed object.
pub fn seed_from_value(v: &Value) -> Result<SeedSample> {
    let obj = as_object(v, "$")?;
    let seed = decode_seed_fields(obj)?;
    seed.check().map_err(invariant)?;
    Ok(seed)
}

fn invariant(msg: String) -> CodecError {
    match msg.split_once(": ") {
        Some((path, reason)) => CodecError::schema(path, reason),
        None => CodecError::schema("$", msg),
    }
}

fn encode_seed_fields(seed: &SeedSample) -> Map<String, Value> {
    let mut obj = Map::new();
    if let Some(id) = &seed.id {
        obj.insert("id".into(), json!(id));
    }
    obj.insert("topic".into(), json!(seed.topic));
    obj.insert(
        "characters".into(),
        serde_json::to_value(&seed.characters).expect("personas serialize"),
    );
    obj.insert(
        "recent_conversations".into(),
        serde_json::to_value(&seed.recent_conversations).expect("messages serialize"),
    );
    if let Some(t) = &seed.assigned_topic {
        obj.insert("assigned_topic".into(), json!(t));
    }
    obj
}

pub fn seed_to_value(seed: &SeedSample) -> Value {
    Value::Object(encode_seed_fields(seed))
}

pub fn transcript_to_value(t: &Transcript) -> Value {
    let mut obj = encode_seed_fields(&t.seed);
    obj.insert("system".into(), json!(t.system));
    obj.insert("messages".into(), serde_json::to_value(&t.messages).expect("messages serialize"));
    obj.insert("steps".into(), serde_json::to_value(&t.steps).expect("steps serialize"));
    if let Some(meta) = &t.meta {
        obj.insert("meta".into(), serde_json::to_value(meta).expect("meta serializes"));
    }
    Value::Object(obj)
}

pub fn transcript_from_value(v: &Value) -> Result<Transcript> {
    let obj = as_object(v, "$")?;
    let seed = decode_seed_fields(obj)?;
    let system: SystemLabel = match obj.get("system") {
        None => SystemLabel::HumanMixed,
        Some(v) => typed(v, "$.system")?,
    };
    let messages = decode_messages(obj, "$", "messages")?;
    let steps = match obj.get("steps") {
        None => Vec::new(),
        Some(v) => {
            let arr = as_array(v, "$.steps")?;
            arr.iter()
                .enumerate()
                .map(|(i, s)| typed::<StepRecord>(s, &format!("$.steps[{i}]")))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let meta = match obj.get("meta") {
        None | Some(Value::Null) => None,
        Some(v) => Some(typed::<SimMeta>(v, "$.meta")?),
    };
    let t = Transcript {
        seed,
        messages,
        steps,
        system,
        meta,
    };
    t.check().map_err(invariant)?;
    Ok(t)
}

/// Serializes a transcript to its canonical pretty-printed JSON text.
pub fn transcript_to_string(t: &Transcript) -> String {
    let mut s = serde_json::to_string_pretty(&transcript_to_value(t)).expect("json serialization");
    s.push('\n');
    s
}

pub fn transcript_from_str(s: &str) -> Result<Transcript> {
    let v: Value = serde_json::from_str(s).map_err(|e| CodecError::schema("$", e.to_string()))?;
    transcript_from_value(&v)
}

pub fn read_transcript(path: impl AsRef<Path>) -> Result<Transcript> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CodecError::io(path, e))?;
    transcript_from_str(&text)
}

pub fn write_transcript(t: &Transcript, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, transcript_to_string(t)).map_err(|e| CodecError::io(path, e))
}

/// Reads a `.jsonl` file, decoding each non-blank line with `decode`.
/// Schema errors are reported with a `line N` prefix.
pub fn read_jsonl<T>(path: impl AsRef<Path>, decode: impl Fn(&Value) -> Result<T>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| CodecError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CodecError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line)
            .map_err(|e| CodecError::schema(format!("line {}: $", i + 1), e.to_string()))?;
        let item = decode(&v).map_err(|e| match e {
            CodecError::Schema { path, reason } => CodecError::schema(format!("line {}: {path}", i + 1), reason),
            other => other,
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<'a>(path: impl AsRef<Path>, values: impl IntoIterator<Item = &'a Value>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for v in values {
        serde_json::to_writer(&mut buf, v).expect("json serialization");
        buf.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| CodecError::io(path, e))?;
    file.write_all(&buf).map_err(|e| CodecError::io(path, e))
}

/// Reads a seed corpus. Seeds without an `id` get their 1-based line index.
pub fn read_seed_corpus(path: impl AsRef<Path>) -> Result<Vec<SeedSample>> {
    let mut seeds = read_jsonl(path, seed_from_value)?;
    for (i, s) in seeds.iter_mut().enumerate() {
        if s.id.is_none() {
            s.id = Some((i + 1).to_string());
        }
    }
    Ok(seeds)
}

pub fn write_seed_corpus(path: impl AsRef<Path>, seeds: &[SeedSample]) -> Result<()> {
    let values: Vec<Value> = seeds.iter().map(seed_to_value).collect();
    write_jsonl(path, values.iter())
}
