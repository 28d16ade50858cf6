//! TOML run configuration shared by the CLI and the service.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentConfig;
use crate::backend::{
    BackendError, ChatBackend, RemoteBackend, RemoteConfig, RequestDefaults, ScriptedBackend, ScriptedReply,
};
use crate::baseline::BaselineConfig;
use crate::metrics::judge::Judge;
use crate::metrics::MetricsConfig;
use crate::pipeline::{ClusterOptions, FilterThresholds};
use crate::sim::SimConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Remote,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(flatten)]
    pub remote: RemoteConfig,
    #[serde(flatten)]
    pub request: RequestDefaults,
    /// Scripted kind: JSON array of reply strings; the last one repeats.
    pub script_path: Option<PathBuf>,
    /// Scripted kind: inline replies, used when no script file is given.
    pub script: Vec<String>,
    /// Scripted kind: reported model latency per call.
    pub scripted_t_system_s: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Remote,
            remote: RemoteConfig::default(),
            request: RequestDefaults::default(),
            script_path: None,
            script: Vec::new(),
            scripted_t_system_s: 0.0,
        }
    }
}

impl BackendConfig {
    pub fn build(&self) -> Result<Arc<dyn ChatBackend>, ConfigError> {
        match self.kind {
            BackendKind::Remote => Ok(Arc::new(RemoteBackend::from_env(self.remote.clone())?)),
            BackendKind::Scripted => {
                let replies: Vec<String> = match &self.script_path {
                    Some(p) => {
                        let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                            path: p.clone(),
                            source,
                        })?;
                        serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
                            path: p.clone(),
                            message: e.to_string(),
                        })?
                    }
                    None => self.script.clone(),
                };
                if replies.is_empty() {
                    return Err(ConfigError::Invalid("scripted backend has no replies".into()));
                }
                let replies: Vec<ScriptedReply> = replies.into_iter().map(ScriptedReply::from).collect();
                Ok(Arc::new(
                    ScriptedBackend::new(replies, self.scripted_t_system_s)
                        .repeating_last()
                        .with_label(format!("scripted:{}", self.request.model_id)),
                ))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub parallelism: usize,
    pub retry_budget: u32,
    pub thresholds: FilterThresholds,
    pub cluster: ClusterOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            parallelism: 4,
            retry_budget: 2,
            thresholds: FilterThresholds::default(),
            cluster: ClusterOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    /// Session logs and the questionnaire table live here.
    pub data_dir: PathBuf,
    /// Seed corpus (JSONL) that sessions are started from.
    pub seeds_path: PathBuf,
    pub inactivity_timeout_s: f64,
    /// Sessions with fewer human turns are flagged as low quality.
    pub min_human_turns: usize,
    /// Agent steps allowed between two human messages.
    pub max_consecutive_steps: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
            seeds_path: PathBuf::from("data/seeds.jsonl"),
            inactivity_timeout_s: 1800.0,
            min_human_turns: 5,
            max_consecutive_steps: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub backend: BackendConfig,
    pub agent: AgentConfig,
    pub baseline: BaselineConfig,
    pub sim: SimConfig,
    pub pipeline: PipelineConfig,
    pub metrics: MetricsConfig,
    pub service: ServiceConfig,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<inline>"),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        Self::from_toml(&read(path)?).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.agent.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.baseline.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.sim.validate().map_err(ConfigError::Invalid)?;
        self.pipeline.thresholds.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }
}

/// Judge panel file: one `[[judges]]` table per judge.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JudgePanel {
    pub judges: Vec<JudgeEntry>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_retry")]
    pub retry_budget: u32,
}

fn default_parallelism() -> usize {
    4
}

fn default_retry() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeEntry {
    pub id: String,
    #[serde(flatten)]
    pub backend: BackendConfig,
}

impl JudgePanel {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let panel: JudgePanel = toml::from_str(&read(path)?).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if panel.judges.is_empty() {
            return Err(ConfigError::Invalid("judge panel is empty".into()));
        }
        Ok(panel)
    }

    pub fn build(&self) -> Result<Vec<Judge>, ConfigError> {
        self.judges
            .iter()
            .map(|j| Ok(Judge::new(j.id.clone(), j.backend.build()?)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::SystemLabel;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn sections_parse() {
        let cfg = Config::from_toml(
            r#"
[backend]
kind = "scripted"
script = ["<think>x</think><wait>wait</wait>"]
model_id = "m"
temperature = 0.2

[agent]
k_think = 0.125

[sim]
system = "PD"
w_min = 30.0
w_max = 30.0

[pipeline.thresholds]
min_turns = 5
"#,
        )
        .unwrap();
        assert_eq!(cfg.backend.kind, BackendKind::Scripted);
        assert_eq!(cfg.backend.request.temperature, 0.2);
        assert_eq!(cfg.agent.k_think, 0.125);
        assert_eq!(cfg.agent.k_type, 0.2);
        assert_eq!(cfg.sim.system, SystemLabel::Pd);
        assert_eq!(cfg.pipeline.thresholds.min_turns, 5);
        assert!(cfg.backend.build().is_ok());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::from_toml("[sim]\nw_min = 50.0\nw_max = 10.0\n").is_err());
        assert!(Config::from_toml("[agent]\nn_short = 0\n").is_err());
        assert!(Config::from_toml("[backend]\nkind = \"carrier-pigeon\"\n").is_err());
    }

    #[test]
    fn judge_panel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("judges.toml");
        std::fs::write(
            &p,
            "[[judges]]\nid = \"a\"\nkind = \"scripted\"\nscript = [\"<answer>A</answer>\"]\n\n[[judges]]\nid = \"b\"\nkind = \"scripted\"\nscript = [\"<answer>C</answer>\"]\n",
        )
        .unwrap();
        let panel = JudgePanel::load(&p).unwrap();
        assert_eq!(panel.build().unwrap().len(), 2);
    }
}
