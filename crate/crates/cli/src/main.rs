mod batch;
mod remote;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use stepwise_core::config::Config;
use stepwise_core::SystemLabel;

#[derive(Parser)]
#[command(name = "stepwise", version, about = "Step-wise chat agents: simulation, corpus pipeline, metrics and live sessions")]
struct Cli {
    /// TOML config; defaults apply to anything it leaves out.
    #[arg(long, global = true, env = "STEPWISE_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP session service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        /// Full bind address; overrides the config and `--port`.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Simulate agent-agent dialogues from a seed corpus, one file per seed.
    Simulate(batch::SimulateArgs),
    /// Rewrite persona-chat records into seed dialogues.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skipped records are written here as JSON lines.
        #[arg(long)]
        skips: Option<PathBuf>,
    },
    /// Keep seeds whose turn and message counts fall inside the thresholds.
    Filter {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `TURNS_MIN-TURNS_MAX/MSGS_MIN-MSGS_MAX`, e.g. `6-8/25-40`.
        #[arg(long)]
        thresholds: Option<String>,
    },
    /// Two-level topic clustering of a seed corpus.
    Cluster {
        #[arg(long = "in")]
        input: PathBuf,
        /// Topic tree JSON.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        skips: Option<PathBuf>,
    },
    /// Assign every seed one of the clustered topics.
    Assign {
        #[arg(long = "in")]
        input: PathBuf,
        /// Topic tree from `cluster`; its assignment map is updated in place.
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        skips: Option<PathBuf>,
    },
    /// Topics ranked by number of assigned seeds.
    ReportTopics {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        top: Option<usize>,
    },
    /// Corpus metrics over transcript files or directories.
    Metrics {
        #[arg(long = "in", required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// LLM-judge evaluation of transcripts.
    Judge {
        #[arg(long, value_enum)]
        mode: JudgeMode,
        /// Judge panel TOML with one `[[judges]]` table per judge.
        #[arg(long)]
        judges: PathBuf,
        #[arg(long = "in", required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Live sessions on a running service.
    Session {
        #[arg(long, env = "STEPWISE_URL", default_value = "http://127.0.0.1:8080")]
        url: String,
        #[command(subcommand)]
        command: remote::SessionCommand,
    },
    /// Submit a role-identification questionnaire (JSON file) to the service.
    Questionnaire {
        #[arg(long, env = "STEPWISE_URL", default_value = "http://127.0.0.1:8080")]
        url: String,
        file: PathBuf,
    },
    /// Export role-identification tallies from the service.
    Export {
        #[arg(long, env = "STEPWISE_URL", default_value = "http://127.0.0.1:8080")]
        url: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum JudgeMode {
    Experience,
    Roleid,
}

pub fn parse_system(s: &str) -> Result<SystemLabel, String> {
    match SystemLabel::parse(s) {
        Some(SystemLabel::HumanMixed) | None => Err(format!("expected PD, S1 or S2, got `{s}`")),
        Some(l) => Ok(l),
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(Config::default()),
    }
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let config = || load_config(cli.config.as_ref());
    match cli.command {
        Command::Serve { port, bind } => {
            let cfg = config()?;
            let addr = match (bind, port) {
                (Some(b), _) => b,
                (None, Some(p)) => {
                    let host = cfg.service.bind.rsplit_once(':').map_or("127.0.0.1", |(h, _)| h);
                    format!("{host}:{p}")
                }
                (None, None) => cfg.service.bind.clone(),
            };
            let state = stepwise_service::AppState::from_config(&cfg)?;
            stepwise_service::serve(state, &addr).await?;
        }
        Command::Simulate(args) => batch::simulate(&config()?, args).await?,
        Command::Convert { input, out, skips } => batch::convert(&config()?, &input, &out, skips.as_deref()).await?,
        Command::Filter {
            input,
            out,
            thresholds,
        } => batch::filter(&config()?, &input, &out, thresholds.as_deref())?,
        Command::Cluster { input, out, skips } => batch::cluster(&config()?, &input, &out, skips.as_deref()).await?,
        Command::Assign {
            input,
            tree,
            out,
            skips,
        } => batch::assign(&config()?, &input, &tree, &out, skips.as_deref()).await?,
        Command::ReportTopics { tree, top } => batch::report_topics(&tree, top)?,
        Command::Metrics { input, out } => batch::metrics(&config()?, &input, out.as_deref())?,
        Command::Judge {
            mode,
            judges,
            input,
            out,
        } => batch::judge(matches!(mode, JudgeMode::Roleid), &judges, &input, out.as_deref()).await?,
        Command::Session { url, command } => remote::session(&url, command).await?,
        Command::Questionnaire { url, file } => remote::questionnaire(&url, &file).await?,
        Command::Export { url, out } => remote::export(&url, out.as_deref()).await?,
    }
    Ok(())
}
