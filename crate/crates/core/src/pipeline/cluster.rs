//! Hierarchical prompt-based topic clustering and per-seed assignment.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{extract_json, PipelineError, SkipRecord};
use crate::backend::{ChatBackend, RequestDefaults};
use crate::dialogue::SeedSample;
use crate::prompts;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterOptions {
    pub batch_size: usize,
    pub subtopics_per_batch: usize,
    pub final_k: usize,
    pub assign_batch_size: usize,
    pub retry_budget: u32,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            batch_size: 600,
            subtopics_per_batch: 60,
            final_k: 60,
            assign_batch_size: 100,
            retry_budget: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TopicTree {
    pub batch_subtopics: Vec<Vec<String>>,
    pub merged_topics: Vec<String>,
    /// Seed id to final topic.
    pub assignment: BTreeMap<String, String>,
}

impl TopicTree {
    pub fn subtopic_count(&self) -> usize {
        self.batch_subtopics.iter().map(Vec::len).sum()
    }
}

fn seed_key(seed: &SeedSample, index: usize) -> String {
    seed.id.clone().unwrap_or_else(|| (index + 1).to_string())
}

/// Topic descriptor per seed: the existing topic when present, otherwise a
/// model summary. Records whose summary fails after retries are skipped.
pub async fn summarize_topics(
    seeds: &[SeedSample],
    backend: &dyn ChatBackend,
    request: &RequestDefaults,
    retry_budget: u32,
) -> Result<(Vec<(String, String)>, Vec<SkipRecord>), PipelineError> {
    if seeds.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let mut out = Vec::new();
    let mut skips = Vec::new();
    for (i, seed) in seeds.iter().enumerate() {
        let key = seed_key(seed, i);
        if !seed.topic.trim().is_empty() {
            out.push((key, seed.topic.trim().to_string()));
            continue;
        }
        let convo = prompts::history_lines(&seed.recent_conversations);
        let req = request.request(prompts::fill(prompts::TOPIC, &[("<|CONVERSATION|>", &convo)]));
        let mut attempt = 0;
        loop {
            match backend.complete(&req).await {
                Ok(r) if !r.text.trim().is_empty() => {
                    out.push((key, r.text.trim().to_string()));
                    break;
                }
                res => {
                    if attempt >= retry_budget {
                        let reason = match res {
                            Err(e) => e.to_string(),
                            Ok(_) => "empty descriptor".into(),
                        };
                        skips.push(SkipRecord::new(key, "summarize_topics", reason));
                        break;
                    }
                    attempt += 1;
                }
            }
        }
    }
    Ok((out, skips))
}

pub fn level1_prompt(batch: &[String], k: usize) -> String {
    let topics_json = serde_json::to_string_pretty(batch).expect("json");
    prompts::fill(
        prompts::CLUSTER_LEVEL1,
        &[
            ("{count}", &batch.len().to_string()),
            ("{k}", &k.to_string()),
            ("{topics_json}", &topics_json),
        ],
    )
}

pub fn level2_prompt(subtopics: &[String], k: usize) -> String {
    let topics_json = serde_json::to_string_pretty(subtopics).expect("json");
    prompts::fill(
        prompts::CLUSTER_LEVEL2,
        &[
            ("{count}", &subtopics.len().to_string()),
            ("{k}", &k.to_string()),
            ("{topics_json}", &topics_json),
        ],
    )
}

fn parse_names(text: &str) -> Result<Vec<String>, PipelineError> {
    let v = extract_json(text).ok_or_else(|| PipelineError::JsonParse("no JSON array in output".into()))?;
    let arr = v.as_array().ok_or_else(|| PipelineError::Schema {
        path: "$".into(),
        reason: "expected an array of topic names".into(),
    })?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| match x.as_str().map(str::trim) {
            Some(s) if !s.is_empty() => Ok(s.to_string()),
            _ => Err(PipelineError::Schema {
                path: format!("$[{i}]"),
                reason: "expected a non-empty string".into(),
            }),
        })
        .collect()
}

async fn names_with_retry(
    backend: &dyn ChatBackend,
    request: &RequestDefaults,
    prompt: String,
    retry_budget: u32,
    check: impl Fn(&[String]) -> Result<(), PipelineError>,
) -> Result<Vec<String>, PipelineError> {
    let req = request.request(prompt);
    let mut attempt = 0;
    loop {
        let res = match backend.complete(&req).await {
            Ok(r) => parse_names(&r.text).and_then(|names| check(&names).map(|_| names)),
            Err(e) => Err(PipelineError::Backend(e)),
        };
        match res {
            Ok(names) => return Ok(names),
            Err(e) if attempt >= retry_budget => return Err(e),
            Err(e) => tracing::debug!(attempt, error = %e, "clustering output rejected, retrying"),
        }
        attempt += 1;
    }
}

/// Stage 1 maps each batch of descriptors (corpus order) to subtopics; full
/// batches must yield exactly `subtopics_per_batch` names and the final
/// partial batch at most that many. Stage 2 merges all subtopics into exactly
/// `final_k` distinct topics.
pub async fn cluster_two_level(
    descriptors: &[String],
    backend: &dyn ChatBackend,
    request: &RequestDefaults,
    opts: &ClusterOptions,
) -> Result<TopicTree, PipelineError> {
    if descriptors.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let k1 = opts.subtopics_per_batch;
    let mut batch_subtopics = Vec::new();
    for batch in descriptors.chunks(opts.batch_size.max(1)) {
        let full = batch.len() == opts.batch_size;
        let ask = if full { k1 } else { k1.min(batch.len()) };
        let names = names_with_retry(backend, request, level1_prompt(batch, ask), opts.retry_budget, |names| {
            let ok = if full {
                names.len() == k1
            } else {
                (1..=k1).contains(&names.len())
            };
            if ok {
                Ok(())
            } else {
                Err(PipelineError::Cardinality {
                    stage: "level-1",
                    expected: if full { k1.to_string() } else { format!("1..={k1}") },
                    got: names.len(),
                })
            }
        })
        .await?;
        batch_subtopics.push(names);
    }
    let all: Vec<String> = batch_subtopics.iter().flatten().cloned().collect();
    let k2 = opts.final_k;
    let merged_topics = names_with_retry(backend, request, level2_prompt(&all, k2), opts.retry_budget, |names| {
        let distinct: BTreeSet<&String> = names.iter().collect();
        if names.len() != k2 || distinct.len() != k2 {
            return Err(PipelineError::Cardinality {
                stage: "level-2",
                expected: format!("{k2} distinct"),
                got: distinct.len().min(names.len()),
            });
        }
        Ok(())
    })
    .await?;
    Ok(TopicTree {
        batch_subtopics,
        merged_topics,
        assignment: BTreeMap::new(),
    })
}

pub fn assign_prompt(topics: &[String], batch: &[(usize, &str)]) -> String {
    let topics_list = topics.iter().map(|t| format!("- {t}")).collect::<Vec<_>>().join("\n");
    let items: Vec<Value> = batch.iter().map(|(id, d)| json!({"id": id, "topic": d})).collect();
    let topics_json = serde_json::to_string_pretty(&items).expect("json");
    prompts::fill(
        prompts::ASSIGN,
        &[("{topics_list}", &topics_list), ("{topics_json}", &topics_json)],
    )
}

/// Validates an assignment reply: every id in `1..=n` exactly once, only
/// known topic names. Returns id to topic.
fn parse_assignment(text: &str, topics: &BTreeSet<&str>, n: usize) -> Result<HashMap<usize, String>, PipelineError> {
    let v = extract_json(text).ok_or_else(|| PipelineError::JsonParse("no JSON object in output".into()))?;
    let obj = v.as_object().ok_or_else(|| PipelineError::Schema {
        path: "$".into(),
        reason: "expected an object".into(),
    })?;
    let mut out = HashMap::new();
    for (topic, ids) in obj {
        let name = topic.trim();
        if !topics.contains(name) {
            return Err(PipelineError::Coverage(format!("unknown topic `{name}`")));
        }
        let ids = ids
            .as_array()
            .ok_or_else(|| PipelineError::Coverage(format!("ids for `{name}` are not an array")))?;
        for id in ids {
            let id = id
                .as_u64()
                .or_else(|| id.as_str().and_then(|s| s.trim().parse().ok()))
                .ok_or_else(|| PipelineError::Coverage(format!("non-integer id {id}")))? as usize;
            if id == 0 || id > n {
                return Err(PipelineError::Coverage(format!("unknown id {id}")));
            }
            if out.insert(id, name.to_string()).is_some() {
                return Err(PipelineError::Coverage(format!("id {id} assigned more than once")));
            }
        }
    }
    if let Some(missing) = (1..=n).find(|i| !out.contains_key(i)) {
        return Err(PipelineError::Coverage(format!("id {missing} not assigned")));
    }
    Ok(out)
}

/// Assigns every seed one final topic, writing both the tree's assignment map
/// and each seed's `assigned_topic`. Batches that keep failing validation are
/// skipped and logged per seed.
pub async fn assign_topics(
    seeds: &mut [SeedSample],
    tree: &mut TopicTree,
    backend: &dyn ChatBackend,
    request: &RequestDefaults,
    opts: &ClusterOptions,
) -> Vec<SkipRecord> {
    let topics: BTreeSet<&str> = tree.merged_topics.iter().map(String::as_str).collect();
    let mut skips = Vec::new();
    let mut updates: Vec<(usize, String)> = Vec::new();
    let size = opts.assign_batch_size.max(1);
    for (b, chunk) in seeds.chunks(size).enumerate() {
        let offset = b * size;
        let batch: Vec<(usize, &str)> = chunk.iter().enumerate().map(|(i, s)| (i + 1, s.topic.as_str())).collect();
        let req = request.request(assign_prompt(&tree.merged_topics, &batch));
        let mut attempt = 0;
        loop {
            let res = match backend.complete(&req).await {
                Ok(r) => parse_assignment(&r.text, &topics, chunk.len()),
                Err(e) => Err(PipelineError::Backend(e)),
            };
            match res {
                Ok(map) => {
                    for (id, topic) in map {
                        updates.push((offset + id - 1, topic));
                    }
                    break;
                }
                Err(e) if attempt >= opts.retry_budget => {
                    for (i, s) in chunk.iter().enumerate() {
                        skips.push(SkipRecord::new(seed_key(s, offset + i), "assign", e.to_string()));
                    }
                    break;
                }
                Err(_) => attempt += 1,
            }
        }
    }
    for (idx, topic) in updates {
        let key = seed_key(&seeds[idx], idx);
        seeds[idx].assigned_topic = Some(topic.clone());
        tree.assignment.insert(key, topic);
    }
    skips
}

/// Topics ranked by assigned-seed count, ties broken lexicographically.
pub fn top_topics_report(tree: &TopicTree, top_k: Option<usize>) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in tree.assignment.values() {
        *counts.entry(t).or_default() += 1;
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().map(|(t, c)| (t.to_string(), c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if let Some(k) = top_k {
        ranked.truncate(k);
    }
    ranked
}
