//! Commands that run in-process.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde_json::Value;
use stepwise_core::codec::{read_jsonl, read_seed_corpus, read_transcript, write_jsonl, write_seed_corpus, write_transcript};
use stepwise_core::config::{BackendKind, Config, JudgePanel};
use stepwise_core::metrics::judge::{judge_experience, judge_role_id, JudgeOptions};
use stepwise_core::metrics::MetricsReport;
use stepwise_core::pipeline::{
    assign_topics, cluster_two_level, convert_corpus, filter_corpus, summarize_topics, top_topics_report,
    FilterThresholds, RawRecord, SkipRecord, TopicTree,
};
use stepwise_core::sim::{DuetBackends, Simulator, TurnUnit};
use stepwise_core::{ChatBackend, ScriptedBackend, SystemLabel, Transcript};

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long)]
    seeds: PathBuf,
    #[arg(long, value_parser = crate::parse_system)]
    system: Option<SystemLabel>,
    /// Turns per dialogue.
    #[arg(long)]
    turns: Option<usize>,
    #[arg(long)]
    rng: Option<u64>,
    /// Count only windows in which the holder spoke.
    #[arg(long)]
    speaking_turns: bool,
    /// Output directory; one `<seed id>.json` per seed.
    #[arg(long)]
    out: PathBuf,
    /// Scripted replies (JSON array of strings) for the first character.
    #[arg(long)]
    script_a: Option<PathBuf>,
    /// Scripted replies for the second character.
    #[arg(long)]
    script_b: Option<PathBuf>,
}

fn read_script(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let replies: Vec<String> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if replies.is_empty() {
        bail!("script {} is empty", path.display());
    }
    Ok(replies)
}

fn scripted(replies: &[String]) -> Arc<dyn ChatBackend> {
    Arc::new(ScriptedBackend::new(replies.iter().cloned(), 0.0).repeating_last())
}

fn write_skips(path: Option<&Path>, skips: &[SkipRecord]) -> Result<()> {
    if !skips.is_empty() {
        tracing::warn!(count = skips.len(), "records skipped");
    }
    if let Some(p) = path {
        let values: Vec<Value> = skips.iter().map(|s| serde_json::to_value(s).expect("json")).collect();
        write_jsonl(p, values.iter())?;
    }
    Ok(())
}

fn write_json(out: Option<&Path>, v: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

/// File stem safe for any seed id.
fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub async fn simulate(cfg: &Config, args: SimulateArgs) -> Result<()> {
    let seeds = read_seed_corpus(&args.seeds)?;
    let mut sim = cfg.sim.clone();
    if let Some(s) = args.system {
        sim.system = s;
    }
    if let Some(t) = args.turns {
        sim.max_turns = t;
    }
    if let Some(r) = args.rng {
        sim.rng_seed = r;
    }
    if args.speaking_turns {
        sim.turn_unit = TurnUnit::SpeakingWindows;
    }
    sim.validate().map_err(anyhow::Error::msg)?;
    let simulator = Simulator {
        sim,
        agent: cfg.agent.clone(),
        baseline: cfg.baseline.clone(),
        request: cfg.backend.request.clone(),
    };
    let script_a = args.script_a.as_deref().map(read_script).transpose()?;
    let script_b = args.script_b.as_deref().map(read_script).transpose()?;
    // Scripted backends hold a cursor, so each duet gets fresh ones; only a
    // remote backend is shared.
    let remote = cfg.backend.kind == BackendKind::Remote;
    let shared = if remote && (script_a.is_none() || script_b.is_none()) {
        Some(cfg.backend.build()?)
    } else {
        None
    };
    let side = |script: &Option<Vec<String>>| -> Result<Arc<dyn ChatBackend>> {
        Ok(match (script, &shared) {
            (Some(r), _) => scripted(r),
            (None, Some(b)) => b.clone(),
            (None, None) => cfg.backend.build()?,
        })
    };
    let mut backends = Vec::with_capacity(seeds.len());
    for _ in &seeds {
        backends.push(DuetBackends {
            a: side(&script_a)?,
            b: side(&script_b)?,
            summarizer: match &shared {
                Some(b) => b.clone(),
                None => Arc::new(ScriptedBackend::constant("They have been chatting.")),
            },
        });
    }
    std::fs::create_dir_all(&args.out)?;
    let results = simulator
        .run_corpus(&seeds, cfg.pipeline.parallelism, |i, _| backends[i].clone())
        .await;
    let mut failed = 0;
    for (seed, res) in seeds.iter().zip(results) {
        let id = seed.id.clone().unwrap_or_default();
        let path = args.out.join(format!("{}.json", file_stem(&id)));
        match res {
            Ok(t) => write_transcript(&t, &path)?,
            Err(e) => {
                failed += 1;
                tracing::error!(seed = %id, error = %e, "simulation failed");
            }
        }
    }
    eprintln!("simulated {} of {} seeds into {}", seeds.len() - failed, seeds.len(), args.out.display());
    if failed > 0 {
        bail!("{failed} simulation(s) failed");
    }
    Ok(())
}

pub async fn convert(cfg: &Config, input: &Path, out: &Path, skips: Option<&Path>) -> Result<()> {
    let records: Vec<RawRecord> = read_jsonl(input, |v| {
        serde_json::from_value(v.clone()).map_err(|e| stepwise_core::codec::CodecError::Schema {
            path: "$".into(),
            reason: e.to_string(),
        })
    })?;
    let backend = cfg.backend.build()?;
    let (seeds, skipped) = convert_corpus(
        &records,
        backend.as_ref(),
        &cfg.backend.request,
        cfg.pipeline.retry_budget,
        cfg.pipeline.parallelism,
    )
    .await;
    write_seed_corpus(out, &seeds)?;
    write_skips(skips, &skipped)?;
    eprintln!("converted {} of {} records", seeds.len(), records.len());
    Ok(())
}

pub fn filter(cfg: &Config, input: &Path, out: &Path, thresholds: Option<&str>) -> Result<()> {
    let th = match thresholds {
        Some(s) => FilterThresholds::parse(s).map_err(anyhow::Error::msg)?,
        None => cfg.pipeline.thresholds,
    };
    let seeds = read_seed_corpus(input)?;
    let (kept, report) = filter_corpus(&seeds, &th);
    write_seed_corpus(out, &kept)?;
    write_json(None, &report)
}

pub async fn cluster(cfg: &Config, input: &Path, out: &Path, skips: Option<&Path>) -> Result<()> {
    let seeds = read_seed_corpus(input)?;
    let backend = cfg.backend.build()?;
    let (descriptors, skipped) = summarize_topics(
        &seeds,
        backend.as_ref(),
        &cfg.backend.request,
        cfg.pipeline.retry_budget,
    )
    .await?;
    write_skips(skips, &skipped)?;
    let names: Vec<String> = descriptors.into_iter().map(|(_, d)| d).collect();
    let tree = cluster_two_level(&names, backend.as_ref(), &cfg.backend.request, &cfg.pipeline.cluster).await?;
    eprintln!(
        "{} descriptors, {} batches, {} subtopics, {} topics",
        names.len(),
        tree.batch_subtopics.len(),
        tree.subtopic_count(),
        tree.merged_topics.len()
    );
    write_json(Some(out), &tree)
}

pub async fn assign(cfg: &Config, input: &Path, tree_path: &Path, out: &Path, skips: Option<&Path>) -> Result<()> {
    let mut seeds = read_seed_corpus(input)?;
    let text = std::fs::read_to_string(tree_path).with_context(|| format!("reading {}", tree_path.display()))?;
    let mut tree: TopicTree = serde_json::from_str(&text)?;
    let backend = cfg.backend.build()?;
    let skipped = assign_topics(
        &mut seeds,
        &mut tree,
        backend.as_ref(),
        &cfg.backend.request,
        &cfg.pipeline.cluster,
    )
    .await;
    write_skips(skips, &skipped)?;
    write_seed_corpus(out, &seeds)?;
    write_json(Some(tree_path), &tree)?;
    eprintln!("assigned {} of {} seeds", tree.assignment.len(), seeds.len());
    Ok(())
}

pub fn report_topics(tree_path: &Path, top: Option<usize>) -> Result<()> {
    let text = std::fs::read_to_string(tree_path).with_context(|| format!("reading {}", tree_path.display()))?;
    let tree: TopicTree = serde_json::from_str(&text)?;
    for (topic, n) in top_topics_report(&tree, top) {
        println!("{n}\t{topic}");
    }
    Ok(())
}

/// Transcript files named directly or found (non-recursively) in directories,
/// in sorted order.
fn transcript_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!("no transcript files found");
    }
    Ok(out)
}

fn load_transcripts(inputs: &[PathBuf]) -> Result<Vec<Transcript>> {
    transcript_paths(inputs)?
        .iter()
        .map(|p| read_transcript(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

pub fn metrics(cfg: &Config, inputs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let transcripts = load_transcripts(inputs)?;
    let report = MetricsReport::from_transcripts(&transcripts, &cfg.metrics);
    write_json(out, &report)
}

pub async fn judge(roleid: bool, panel_path: &Path, inputs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let panel = JudgePanel::load(panel_path)?;
    let judges = panel.build()?;
    let transcripts = load_transcripts(inputs)?;
    let opts = JudgeOptions {
        retry_budget: panel.retry_budget,
        rng_seed: panel.rng_seed,
        parallelism: panel.parallelism,
        ..JudgeOptions::default()
    };
    if roleid {
        let report = judge_role_id(&transcripts, &judges, &opts).await?;
        if report.excluded > 0 {
            tracing::warn!(excluded = report.excluded, "role-id calls excluded after parse failures");
        }
        write_json(out, &report)
    } else {
        let report = judge_experience(&transcripts, &judges, &opts).await?;
        if report.skipped > 0 {
            tracing::warn!(skipped = report.skipped, "experience calls skipped after parse failures");
        }
        write_json(out, &report)
    }
}
