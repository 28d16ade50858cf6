//! LLM-judge harnesses: seven-dimension dialogue-experience scoring and the
//! automatic role-identification test.

use std::collections::BTreeMap;
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backend::{ChatBackend, RequestDefaults};
use crate::dialogue::{Message, Origin, Transcript};
use crate::metrics::{Judgment, RoleIdTally};
use crate::pipeline::extract_json;
use crate::prompts;

pub const DIMENSIONS: [&str; 7] = [
    "Interesting",
    "Informative",
    "Natural",
    "Coherent",
    "Engaging",
    "On-topic",
    "On-persona",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JudgeError {
    #[error("score parse error: {0}")]
    ScoreParse(String),
    #[error("answer parse error: {0}")]
    AnswerParse(String),
    #[error("transcript unusable for role identification: {0}")]
    Transcript(String),
    #[error("no judges configured")]
    NoJudges,
}

#[derive(Clone)]
pub struct Judge {
    pub id: String,
    pub backend: Arc<dyn ChatBackend>,
}

impl Judge {
    pub fn new(id: impl Into<String>, backend: Arc<dyn ChatBackend>) -> Self {
        Self { id: id.into(), backend }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeOptions {
    pub retry_budget: u32,
    pub rng_seed: u64,
    pub parallelism: usize,
    pub request: RequestDefaults,
}

impl Default for JudgeOptions {
    fn default() -> Self {
        Self {
            retry_budget: 2,
            rng_seed: 0,
            parallelism: 4,
            request: RequestDefaults {
                temperature: 0.0,
                ..RequestDefaults::default()
            },
        }
    }
}

/// Scores for the seven dimensions, keyed by dimension name.
pub type DimensionScores = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceScore {
    pub judge: String,
    pub scores: DimensionScores,
}

/// One (judge, transcript) outcome as persisted to the raw-records log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceRecord {
    pub judge: String,
    pub transcript: usize,
    pub seed_id: Option<String>,
    pub system: String,
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<DimensionScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptExperience {
    pub transcript: usize,
    pub seed_id: Option<String>,
    pub system: String,
    pub judges: usize,
    pub mean: DimensionScores,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperienceReport {
    pub per_transcript: Vec<TranscriptExperience>,
    /// Corpus mean of the per-transcript means, by system label.
    pub per_system: BTreeMap<String, DimensionScores>,
    pub records: Vec<ExperienceRecord>,
    pub skipped: usize,
}

fn check_score(label: &str, dim: &str, v: &Value) -> Result<f64, JudgeError> {
    let x = v
        .as_f64()
        .or_else(|| v.as_str().and_then(|s| s.trim().parse().ok()))
        .ok_or_else(|| JudgeError::ScoreParse(format!("{label}.{dim}: not a number")))?;
    if !(0.0..=100.0).contains(&x) {
        return Err(JudgeError::ScoreParse(format!("{label}.{dim}: {x} outside 0-100")));
    }
    Ok(x)
}

/// Parses a judge reply into scores for each expected dialogue label.
pub fn parse_experience(text: &str, labels: &[String]) -> Result<Vec<DimensionScores>, JudgeError> {
    let v = extract_json(text).ok_or_else(|| JudgeError::ScoreParse("reply is not JSON".into()))?;
    let obj = v
        .as_object()
        .ok_or_else(|| JudgeError::ScoreParse("reply is not a JSON object".into()))?;
    labels
        .iter()
        .map(|label| {
            let entry = obj
                .get(label)
                .and_then(Value::as_object)
                .ok_or_else(|| JudgeError::ScoreParse(format!("missing `{label}`")))?;
            DIMENSIONS
                .iter()
                .map(|dim| {
                    let v = entry
                        .get(*dim)
                        .ok_or_else(|| JudgeError::ScoreParse(format!("{label}: missing `{dim}`")))?;
                    Ok((dim.to_string(), check_score(label, dim, v)?))
                })
                .collect()
        })
        .collect()
}

pub fn experience_prompt(group: &[&Transcript], labels: &[String]) -> String {
    let seed = &group[0].seed;
    let personas = seed
        .characters
        .iter()
        .map(|p| format!("{}: {}", p.name, p.personality))
        .collect::<Vec<_>>()
        .join("\n");
    let history = prompts::history_lines(&seed.recent_conversations);
    let dialogues = group
        .iter()
        .zip(labels)
        .map(|(t, label)| format!("{label}:\n{history}\n{}", prompts::history_lines(&t.messages)))
        .collect::<Vec<_>>()
        .join("\n\n");
    prompts::fill(
        prompts::EXPERIENCE_JUDGE,
        &[("{topic}", &seed.topic), ("{personas}", &personas), ("{dialogues}", &dialogues)],
    )
}

/// Groups transcript indices by seed, in order of first appearance.
fn group_by_seed(transcripts: &[Transcript]) -> Vec<Vec<usize>> {
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, t) in transcripts.iter().enumerate() {
        let key = match &t.seed.id {
            Some(id) => id.clone(),
            None => serde_json::to_string(&crate::codec::seed_to_value(&t.seed)).unwrap_or_default(),
        };
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(i),
            None => groups.push((key, vec![i])),
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

fn mean_scores(list: &[&DimensionScores]) -> DimensionScores {
    DIMENSIONS
        .iter()
        .map(|d| {
            let sum: f64 = list.iter().map(|s| s[*d]).sum();
            (d.to_string(), sum / list.len() as f64)
        })
        .collect()
}

/// Scores every transcript with every judge. Transcripts that share a seed
/// are shown together in one call, in an order shuffled per judge call.
pub async fn judge_experience(
    transcripts: &[Transcript],
    judges: &[Judge],
    opts: &JudgeOptions,
) -> Result<ExperienceReport, JudgeError> {
    if judges.is_empty() {
        return Err(JudgeError::NoJudges);
    }
    let groups = group_by_seed(transcripts);
    let mut calls = Vec::new();
    for (gi, group) in groups.iter().enumerate() {
        for (ji, judge) in judges.iter().enumerate() {
            let mut order = group.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(opts.rng_seed);
            rng.set_stream((gi * judges.len() + ji) as u64);
            order.shuffle(&mut rng);
            calls.push((judge, order));
        }
    }
    let results: Vec<Vec<ExperienceRecord>> = stream::iter(calls)
        .map(|(judge, order)| async move {
            let group: Vec<&Transcript> = order.iter().map(|&i| &transcripts[i]).collect();
            let labels: Vec<String> = (1..=order.len()).map(|k| format!("Dialogue {k}")).collect();
            let prompt = experience_prompt(&group, &labels);
            let request = opts.request.request(prompt);
            let mut attempts = 0;
            let outcome = loop {
                attempts += 1;
                let parsed = match judge.backend.complete(&request).await {
                    Ok(r) => parse_experience(&r.text, &labels),
                    Err(e) => Err(JudgeError::ScoreParse(e.to_string())),
                };
                match parsed {
                    Ok(s) => break Ok(s),
                    Err(e) if attempts > opts.retry_budget => break Err(e),
                    Err(e) => tracing::debug!(judge = %judge.id, error = %e, "retrying judge call"),
                }
            };
            order
                .iter()
                .enumerate()
                .map(|(k, &i)| {
                    let t = &transcripts[i];
                    let (scores, error) = match &outcome {
                        Ok(s) => (Some(s[k].clone()), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    ExperienceRecord {
                        judge: judge.id.clone(),
                        transcript: i,
                        seed_id: t.seed.id.clone(),
                        system: t.system.to_string(),
                        label: labels[k].clone(),
                        scores,
                        error,
                        attempts,
                    }
                })
                .collect()
        })
        .buffered(opts.parallelism.max(1))
        .collect()
        .await;

    let mut records: Vec<ExperienceRecord> = results.into_iter().flatten().collect();
    records.sort_by(|a, b| a.transcript.cmp(&b.transcript).then_with(|| a.judge.cmp(&b.judge)));
    let skipped = records.iter().filter(|r| r.scores.is_none()).count();
    if skipped > 0 {
        tracing::warn!(skipped, "judge calls skipped after retries");
    }

    let mut per_transcript = Vec::new();
    for (i, t) in transcripts.iter().enumerate() {
        let scored: Vec<&DimensionScores> = records
            .iter()
            .filter(|r| r.transcript == i)
            .filter_map(|r| r.scores.as_ref())
            .collect();
        if scored.is_empty() {
            continue;
        }
        per_transcript.push(TranscriptExperience {
            transcript: i,
            seed_id: t.seed.id.clone(),
            system: t.system.to_string(),
            judges: scored.len(),
            mean: mean_scores(&scored),
        });
    }
    let mut by_system: BTreeMap<String, Vec<&DimensionScores>> = BTreeMap::new();
    for p in &per_transcript {
        by_system.entry(p.system.clone()).or_default().push(&p.mean);
    }
    let per_system = by_system.into_iter().map(|(k, v)| (k, mean_scores(&v))).collect();
    Ok(ExperienceReport {
        per_transcript,
        per_system,
        records,
        skipped,
    })
}

/// A judge's pick in the role-identification test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoleAnswer {
    #[serde(rename = "Role 1")]
    Role1,
    #[serde(rename = "Role 2")]
    Role2,
    Unclear,
}

impl RoleAnswer {
    /// Maps the pick to a judgment given which role (1 or 2) is the AI.
    pub fn judge(self, ai_role: u8) -> Judgment {
        match (self, ai_role) {
            (RoleAnswer::Unclear, _) => Judgment::Unclear,
            (RoleAnswer::Role1, 1) | (RoleAnswer::Role2, 2) => Judgment::Correct,
            _ => Judgment::Error,
        }
    }
}

/// Reads `A`, `B` or `C` from the last `<answer>` block.
pub fn parse_answer(text: &str) -> Result<RoleAnswer, JudgeError> {
    let start = text
        .rfind("<answer>")
        .ok_or_else(|| JudgeError::AnswerParse("no <answer> tag".into()))?;
    let body = &text[start + "<answer>".len()..];
    let end = body
        .find("</answer>")
        .ok_or_else(|| JudgeError::AnswerParse("unclosed <answer> tag".into()))?;
    let ans = body[..end].trim();
    match ans.chars().next().map(|c| c.to_ascii_uppercase()) {
        Some('A') => Ok(RoleAnswer::Role1),
        Some('B') => Ok(RoleAnswer::Role2),
        Some('C') => Ok(RoleAnswer::Unclear),
        _ => Err(JudgeError::AnswerParse(format!("unrecognized answer `{ans}`"))),
    }
}

/// Anonymized view of a two-party dialogue with a known AI side.
#[derive(Debug, Clone, PartialEq)]
pub struct AnonymizedDialogue {
    pub text: String,
    /// 1 or 2.
    pub ai_role: u8,
}

/// The role that sent the generated (`agent`) messages.
pub fn ai_role_name(t: &Transcript) -> Result<&str, JudgeError> {
    let mut ai: Option<&str> = None;
    for m in t.messages.iter().filter(|m| m.origin == Origin::Agent) {
        match ai {
            None => ai = Some(&m.role),
            Some(r) if r != m.role => {
                return Err(JudgeError::Transcript("both roles have agent messages".into()));
            }
            _ => {}
        }
    }
    ai.ok_or_else(|| JudgeError::Transcript("no agent messages".into()))
}

/// Renames the two speakers to `Role 1`/`Role 2`, with the AI's slot drawn
/// from `rng`.
pub fn anonymize(t: &Transcript, rng: &mut impl Rng) -> Result<AnonymizedDialogue, JudgeError> {
    let ai = ai_role_name(t)?;
    let [a, b] = t.seed.names();
    let human = if ai == a { b } else { a };
    let ai_role: u8 = if rng.random_bool(0.5) { 1 } else { 2 };
    let name = |role: &str| -> &'static str {
        if (role == ai) == (ai_role == 1) {
            "Role 1"
        } else {
            "Role 2"
        }
    };
    let history: Vec<&Message> = t.full_history().collect();
    if history.iter().any(|m| m.role != ai && m.role != human) {
        return Err(JudgeError::Transcript("more than two roles".into()));
    }
    let text = history
        .iter()
        .map(|m| format!("{}: {}", name(&m.role), m.content))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(AnonymizedDialogue { text, ai_role })
}

pub fn role_id_prompt(d: &AnonymizedDialogue) -> String {
    prompts::fill(prompts::ROLE_ID, &[("{dialogue}", &d.text)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleIdRecord {
    pub judge: String,
    pub transcript: usize,
    pub seed_id: Option<String>,
    pub system: String,
    pub ai_role: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<RoleAnswer>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judgment: Option<Judgment>,
    /// Set when the call was excluded from the tally.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excluded: Option<String>,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoleIdReport {
    pub tally: RoleIdTally,
    pub per_system: BTreeMap<String, RoleIdTally>,
    pub records: Vec<RoleIdRecord>,
    pub excluded: usize,
}

/// Asks every judge which role is the AI. Calls whose answer cannot be
/// parsed within the retry budget are left out of the tally and logged.
pub async fn judge_role_id(
    transcripts: &[Transcript],
    judges: &[Judge],
    opts: &JudgeOptions,
) -> Result<RoleIdReport, JudgeError> {
    if judges.is_empty() {
        return Err(JudgeError::NoJudges);
    }
    let mut views = Vec::new();
    for (i, t) in transcripts.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.rng_seed);
        rng.set_stream(i as u64);
        views.push(anonymize(t, &mut rng)?);
    }
    let calls: Vec<(usize, &Judge)> = (0..transcripts.len())
        .flat_map(|i| judges.iter().map(move |j| (i, j)))
        .collect();
    let views = &views;
    let records: Vec<RoleIdRecord> = stream::iter(calls)
        .map(|(i, judge)| async move {
            let view = &views[i];
            let request = opts.request.request(role_id_prompt(view));
            let mut attempts = 0;
            let outcome = loop {
                attempts += 1;
                let parsed = match judge.backend.complete(&request).await {
                    Ok(r) => parse_answer(&r.text),
                    Err(e) => Err(JudgeError::AnswerParse(e.to_string())),
                };
                match parsed {
                    Ok(a) => break Ok(a),
                    Err(e) if attempts > opts.retry_budget => break Err(e),
                    Err(_) => {}
                }
            };
            let t = &transcripts[i];
            let (answer, judgment, excluded) = match outcome {
                Ok(a) => (Some(a), Some(a.judge(view.ai_role)), None),
                Err(e) => {
                    tracing::warn!(judge = %judge.id, transcript = i, error = %e, "role-id call excluded");
                    (None, None, Some(e.to_string()))
                }
            };
            RoleIdRecord {
                judge: judge.id.clone(),
                transcript: i,
                seed_id: t.seed.id.clone(),
                system: t.system.to_string(),
                ai_role: view.ai_role,
                answer,
                judgment,
                excluded,
                attempts,
            }
        })
        .buffered(opts.parallelism.max(1))
        .collect()
        .await;

    let mut report = RoleIdReport::default();
    for r in &records {
        match r.judgment {
            Some(j) => {
                report.tally.record(j);
                report.per_system.entry(r.system.clone()).or_default().record(j);
            }
            None => report.excluded += 1,
        }
    }
    report.records = records;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendError, ScriptedBackend, ScriptedReply};
    use crate::dialogue::{Persona, SeedSample, SystemLabel};

    fn transcript(id: &str, system: SystemLabel) -> Transcript {
        let seed = SeedSample {
            id: Some(id.into()),
            topic: "weekend plans".into(),
            characters: [Persona::new("Ann", "calm"), Persona::new("Bo", "chatty")],
            recent_conversations: vec![Message::seed("Ann", "hey", 0.0), Message::seed("Bo", "yo", 3.0)],
            assigned_topic: None,
        };
        let mut t = Transcript::new(seed, system);
        t.messages = vec![
            Message::new("Ann", "what's up", 5.0, Origin::Human),
            Message::new("Bo", "not much", 8.0, Origin::Agent),
        ];
        t
    }

    fn scores_json(labels: usize, natural: u32) -> String {
        let one: serde_json::Map<String, Value> = DIMENSIONS
            .iter()
            .map(|d| (d.to_string(), Value::from(if *d == "Natural" { natural } else { 50 })))
            .collect();
        let obj: serde_json::Map<String, Value> = (1..=labels)
            .map(|k| (format!("Dialogue {k}"), Value::Object(one.clone())))
            .collect();
        Value::Object(obj).to_string()
    }

    fn judge(id: &str, replies: Vec<ScriptedReply>) -> Judge {
        Judge::new(id, Arc::new(ScriptedBackend::new(replies, 0.0).repeating_last()))
    }

    #[tokio::test]
    async fn experience_mean_over_judges() {
        let judges = [
            judge("j1", vec![scores_json(1, 80).into()]),
            judge("j2", vec![scores_json(1, 90).into()]),
            judge("j3", vec![scores_json(1, 100).into()]),
        ];
        let ts = [transcript("s1", SystemLabel::S2)];
        let r = judge_experience(&ts, &judges, &JudgeOptions::default()).await.unwrap();
        assert_eq!(r.per_transcript[0].mean["Natural"], 90.0);
        assert_eq!(r.per_system["S2"]["Natural"], 90.0);
    }

    #[test]
    fn out_of_range_score_rejected() {
        let err = parse_experience(&scores_json(1, 130), &["Dialogue 1".into()]).unwrap_err();
        assert!(matches!(err, JudgeError::ScoreParse(_)));
    }

    #[tokio::test]
    async fn raw_records_per_judge_and_transcript() {
        let judges: Vec<Judge> = (0..3)
            .map(|k| judge(&format!("j{k}"), vec![scores_json(2, 70).into()]))
            .collect();
        // Same seed, two systems: one call per judge covering both.
        let ts = [transcript("s1", SystemLabel::S1), transcript("s1", SystemLabel::S2)];
        let r = judge_experience(&ts, &judges, &JudgeOptions::default()).await.unwrap();
        assert_eq!(r.records.len(), 6);
        assert_eq!(r.skipped, 0);
    }

    #[tokio::test]
    async fn failed_experience_call_is_skipped() {
        let judges = [judge("j", vec!["garbage".into()])];
        let ts = [transcript("s1", SystemLabel::S2)];
        let opts = JudgeOptions {
            retry_budget: 1,
            ..JudgeOptions::default()
        };
        let r = judge_experience(&ts, &judges, &opts).await.unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.records[0].attempts, 2);
        assert!(r.per_transcript.is_empty());
    }

    #[test]
    fn answer_mapping() {
        assert_eq!(parse_answer("<answer>C</answer>").unwrap(), RoleAnswer::Unclear);
        assert_eq!(parse_answer("hmm <answer> B. Role 2 is AI</answer>").unwrap(), RoleAnswer::Role2);
        assert_eq!(RoleAnswer::Role1.judge(2), Judgment::Error);
        assert_eq!(RoleAnswer::Role2.judge(2), Judgment::Correct);
        assert_eq!(RoleAnswer::Unclear.judge(1), Judgment::Unclear);
        assert!(parse_answer("A").is_err());
    }

    #[tokio::test]
    async fn unclear_answer_counts() {
        let judges = [judge("j", vec!["<answer>C</answer>".into()])];
        let r = judge_role_id(&[transcript("s", SystemLabel::HumanMixed)], &judges, &JudgeOptions::default())
            .await
            .unwrap();
        assert_eq!(r.tally, RoleIdTally::new(0, 1, 0));
    }

    #[tokio::test]
    async fn unparseable_answer_is_excluded() {
        let judges = [judge("j", vec!["no tags".into(), "still none".into()])];
        let opts = JudgeOptions {
            retry_budget: 1,
            ..JudgeOptions::default()
        };
        let r = judge_role_id(&[transcript("s", SystemLabel::HumanMixed)], &judges, &opts)
            .await
            .unwrap();
        assert_eq!(r.tally.n_total, 0);
        assert_eq!(r.excluded, 1);
    }

    #[tokio::test]
    async fn backend_failure_is_retried() {
        let judges = [judge(
            "j",
            vec![
                ScriptedReply::Fail(BackendError::InvalidResponse("x".into())),
                "<answer>A</answer>".into(),
            ],
        )];
        let r = judge_role_id(&[transcript("s", SystemLabel::HumanMixed)], &judges, &JudgeOptions::default())
            .await
            .unwrap();
        assert_eq!(r.tally.n_total, 1);
        assert_eq!(r.records[0].attempts, 2);
    }

    #[test]
    fn anonymization_keeps_ground_truth() {
        let t = transcript("s", SystemLabel::HumanMixed);
        let mut seen = [false; 2];
        for s in 0..32 {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let d = anonymize(&t, &mut rng).unwrap();
            seen[(d.ai_role - 1) as usize] = true;
            let ai_line = d.text.lines().last().unwrap();
            assert_eq!(ai_line, format!("Role {}: not much", d.ai_role));
            assert!(!d.text.contains("Ann") && !d.text.contains("Bo:"));
        }
        assert_eq!(seen, [true, true]);
        assert_eq!(ai_role_name(&t).unwrap(), "Bo");
    }
}
