//! Commands that talk to a running service.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Subcommand;
use futures::StreamExt;
use stepwise_client::Client;
use stepwise_core::api::{CreateSession, EventKind, Questionnaire};
use stepwise_core::SystemLabel;

#[derive(Subcommand)]
pub enum SessionCommand {
    /// Start a session from a seed.
    Create {
        #[arg(long)]
        seed: String,
        #[arg(long, value_parser = crate::parse_system, default_value = "S2")]
        system: SystemLabel,
        /// Character the human plays; defaults to the seed's first character.
        #[arg(long)]
        human_role: Option<String>,
    },
    /// Send a message as the human.
    Post { id: String, text: String },
    /// Print events as JSON lines until the session closes.
    Events {
        id: String,
        /// Resume after this sequence number.
        #[arg(long, default_value_t = 0)]
        after: u64,
    },
    Close {
        id: String,
        #[arg(long)]
        reason: Option<String>,
    },
    Show {
        id: String,
    },
    List,
    /// Save the full transcript JSON.
    Transcript {
        id: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the rater-facing anonymized transcript.
    Anonymized {
        id: String,
    },
}

fn print(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

pub async fn session(url: &str, cmd: SessionCommand) -> Result<()> {
    let c = Client::new(url);
    match cmd {
        SessionCommand::Create {
            seed,
            system,
            human_role,
        } => print(
            &c.create_session(&CreateSession {
                seed_id: seed,
                system,
                human_role,
            })
            .await?,
        ),
        SessionCommand::Post { id, text } => print(&c.post_message(&id, &text).await?),
        SessionCommand::Events { id, after } => {
            let mut events = c.events(&id, after).await?;
            while let Some(e) = events.next().await {
                let e = e?;
                println!("{}", serde_json::to_string(&e)?);
                if matches!(e.kind, EventKind::Closed { .. }) {
                    break;
                }
            }
            Ok(())
        }
        SessionCommand::Close { id, reason } => print(&c.close(&id, reason.as_deref()).await?),
        SessionCommand::Show { id } => print(&c.session(&id).await?),
        SessionCommand::List => print(&c.list_sessions().await?),
        SessionCommand::Transcript { id, out } => {
            let t = c.transcript(&id).await?;
            match out {
                Some(p) => std::fs::write(&p, serde_json::to_string_pretty(&t)? + "\n")
                    .with_context(|| format!("writing {}", p.display())),
                None => print(&t),
            }
        }
        SessionCommand::Anonymized { id } => print(&c.anonymized(&id).await?),
    }
}

pub async fn questionnaire(url: &str, file: &Path) -> Result<()> {
    let text = std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let q: Questionnaire = serde_json::from_str(&text).with_context(|| format!("parsing {}", file.display()))?;
    print(&Client::new(url).submit_questionnaire(&q).await?)
}

pub async fn export(url: &str, out: Option<&Path>) -> Result<()> {
    let ex = Client::new(url).export_roleid().await?;
    match out {
        Some(p) => std::fs::write(p, serde_json::to_string_pretty(&ex)? + "\n")
            .with_context(|| format!("writing {}", p.display())),
        None => print(&ex),
    }
}
