//! Role-identification questionnaire table and tally export.

use std::collections::{BTreeMap, HashSet};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stepwise_core::api::{Questionnaire, RoleIdExport, RoleIdGroup};
use stepwise_core::metrics::judge::RoleAnswer;
use stepwise_core::metrics::{pass_rate, Judgment, RoleIdTally};
use stepwise_core::SystemLabel;

use crate::error::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredAnswer {
    pub transcript_id: String,
    pub answer: RoleAnswer,
    pub ai_role: u8,
    pub judgment: Judgment,
    pub system: SystemLabel,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredQuestionnaire {
    pub id: String,
    pub rater_id: String,
    pub submitted_at: String,
    pub answers: Vec<StoredAnswer>,
}

/// Ground truth for one transcript as needed to score an answer.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptTruth {
    pub ai_role: u8,
    pub system: SystemLabel,
    pub model_id: String,
}

pub struct QuestionnaireStore {
    path: PathBuf,
    rows: Vec<StoredQuestionnaire>,
    seen: HashSet<(String, String)>,
}

impl QuestionnaireStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref().to_path_buf();
        let mut rows = Vec::new();
        if path.exists() {
            let reader = BufReader::new(std::fs::File::open(&path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<StoredQuestionnaire>(&line) {
                    Ok(q) => rows.push(q),
                    Err(e) => tracing::warn!(error = %e, "skipping unreadable questionnaire row"),
                }
            }
        }
        let seen = rows.iter().map(|q| (q.rater_id.clone(), q.id.clone())).collect();
        Ok(Self { path, rows, seen })
    }

    /// Scores a validated submission and appends it.
    pub fn submit(
        &mut self,
        q: &Questionnaire,
        truth: impl Fn(&str) -> Option<TranscriptTruth>,
    ) -> Result<(), ServiceError> {
        if q.answers.len() != 2 {
            return Err(ServiceError::InvalidQuestionnaire(format!(
                "expected exactly 2 answers, got {}",
                q.answers.len()
            )));
        }
        if q.id.trim().is_empty() || q.rater_id.trim().is_empty() {
            return Err(ServiceError::InvalidQuestionnaire("id and rater_id are required".into()));
        }
        let key = (q.rater_id.clone(), q.id.clone());
        if self.seen.contains(&key) {
            return Err(ServiceError::DuplicateSubmission {
                id: q.id.clone(),
                rater: q.rater_id.clone(),
            });
        }
        let mut answers = Vec::with_capacity(2);
        for a in &q.answers {
            let t = truth(&a.transcript_id).ok_or_else(|| ServiceError::UnknownTranscript(a.transcript_id.clone()))?;
            answers.push(StoredAnswer {
                transcript_id: a.transcript_id.clone(),
                answer: a.answer,
                ai_role: t.ai_role,
                judgment: a.answer.judge(t.ai_role),
                system: t.system,
                model_id: t.model_id,
            });
        }
        let row = StoredQuestionnaire {
            id: q.id.clone(),
            rater_id: q.rater_id.clone(),
            submitted_at: chrono::Utc::now().to_rfc3339(),
            answers,
        };
        let mut line = serde_json::to_string(&row).map_err(|e| ServiceError::Storage(e.to_string()))?;
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.write_all(line.as_bytes())?;
        f.flush()?;
        self.seen.insert(key);
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[StoredQuestionnaire] {
        &self.rows
    }

    /// Tallies grouped by (system, model).
    pub fn export(&self) -> RoleIdExport {
        let mut groups: BTreeMap<(SystemLabel, String), RoleIdTally> = BTreeMap::new();
        let mut overall = RoleIdTally::default();
        for a in self.rows.iter().flat_map(|q| q.answers.iter()) {
            groups
                .entry((a.system, a.model_id.clone()))
                .or_default()
                .record(a.judgment);
            overall.record(a.judgment);
        }
        RoleIdExport {
            groups: groups
                .into_iter()
                .map(|((system, model_id), tally)| RoleIdGroup {
                    system,
                    model_id,
                    pass_rate: pass_rate(&tally).ok(),
                    tally,
                })
                .collect(),
            overall_pass_rate: pass_rate(&overall).ok(),
            overall,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use stepwise_core::api::QuestionnaireAnswer;

    fn q(id: &str, rater: &str, a: RoleAnswer, b: RoleAnswer) -> Questionnaire {
        Questionnaire {
            id: id.into(),
            rater_id: rater.into(),
            answers: vec![
                QuestionnaireAnswer {
                    transcript_id: "t1".into(),
                    answer: a,
                },
                QuestionnaireAnswer {
                    transcript_id: "t2".into(),
                    answer: b,
                },
            ],
        }
    }

    fn truth(id: &str) -> Option<TranscriptTruth> {
        let ai_role = match id {
            "t1" => 1,
            "t2" => 2,
            _ => return None,
        };
        Some(TranscriptTruth {
            ai_role,
            system: SystemLabel::S2,
            model_id: "m".into(),
        })
    }

    #[test]
    fn tallies_and_pass_rate() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = QuestionnaireStore::open(dir.path().join("q.jsonl")).unwrap();
        use RoleAnswer::*;
        // t1: AI is Role 1, t2: AI is Role 2.
        store.submit(&q("q1", "r1", Role2, Role1), truth).unwrap(); // 2 errors
        store.submit(&q("q2", "r1", Unclear, Role2), truth).unwrap(); // unclear, correct
        store.submit(&q("q3", "r1", Role1, Role2), truth).unwrap(); // 2 correct
        let ex = store.export();
        assert_eq!(ex.overall, RoleIdTally::new(2, 1, 3));
        assert_eq!(ex.overall_pass_rate, Some(0.5));
        assert_eq!(ex.groups.len(), 1);

        let again = QuestionnaireStore::open(dir.path().join("q.jsonl")).unwrap();
        assert_eq!(again.export(), ex);
    }

    #[test]
    fn rejects_duplicates_unknowns_and_wrong_arity() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = QuestionnaireStore::open(dir.path().join("q.jsonl")).unwrap();
        store.submit(&q("q1", "r1", RoleAnswer::Unclear, RoleAnswer::Unclear), truth).unwrap();
        assert!(matches!(
            store.submit(&q("q1", "r1", RoleAnswer::Unclear, RoleAnswer::Unclear), truth),
            Err(ServiceError::DuplicateSubmission { .. })
        ));
        // Another rater may answer the same questionnaire.
        store.submit(&q("q1", "r2", RoleAnswer::Unclear, RoleAnswer::Unclear), truth).unwrap();
        let mut bad = q("q9", "r1", RoleAnswer::Unclear, RoleAnswer::Unclear);
        bad.answers[1].transcript_id = "nope".into();
        assert!(matches!(store.submit(&bad, truth), Err(ServiceError::UnknownTranscript(_))));
        bad.answers.pop();
        assert!(matches!(store.submit(&bad, truth), Err(ServiceError::InvalidQuestionnaire(_))));
        assert_eq!(store.export().overall.n_total, 4);
    }
}
