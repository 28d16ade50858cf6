//! Step-wise dialogue agents that choose between sending and waiting, paced
//! by simulated thinking and typing time.

pub mod agent;
pub mod api;
pub mod backend;
pub mod baseline;
pub mod codec;
pub mod config;
pub mod dialogue;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod sim;
pub mod step;

pub use agent::{compute_delay, AgentConfig, AgentError, AgentState, StepwiseAgent};
pub use backend::{ChatBackend, ChatRequest, ChatResult, RequestDefaults, ScriptedBackend};
pub use dialogue::{Action, AgentStep, Memory, Message, Origin, Persona, SeedSample, Side, SystemLabel, Transcript};
pub use step::{parse_step, render_step, MalformedOutput};
