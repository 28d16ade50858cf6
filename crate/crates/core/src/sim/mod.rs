//! Dual-agent simulator on a virtual clock.
//!
//! The floor holder gets a window sampled uniformly from `[w_min, w_max]`.
//! Each delivered message spends its display delay from the window; a wait
//! (or the end of a baseline's message list) hands the floor over at once.
//! A message whose delay exceeds the remaining time is still delivered and
//! the floor transfers right after it.

mod window;

use std::sync::Arc;

use futures::stream::{self, StreamExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentConfig, AgentError, AgentState, StepwiseAgent};
use crate::backend::{ChatBackend, RequestDefaults};
use crate::baseline::{BaselineConfig, Baselines};
use crate::dialogue::{
    Action, AgentStep, Message, Origin, SeedSample, Side, SimMeta, StepRecord, SystemLabel, Transcript, WindowEnd,
    WindowRecord,
};

pub use window::{sample_window, step_window, WindowAction, WindowState};

pub const RNG_ALGORITHM: &str = "chacha8/rand_chacha-0.9/seed_from_u64+stream";

/// What `max_turns` counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TurnUnit {
    /// Every floor window, including ones that end in an immediate wait.
    #[default]
    Windows,
    /// Only windows in which the holder delivered at least one message.
    SpeakingWindows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub w_min: f64,
    pub w_max: f64,
    pub max_turns: usize,
    pub rng_seed: u64,
    pub system: SystemLabel,
    pub turn_unit: TurnUnit,
    /// Safety cap on decisions inside one window.
    pub max_steps_per_window: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            w_min: 20.0,
            w_max: 60.0,
            max_turns: 10,
            rng_seed: 0,
            system: SystemLabel::S2,
            turn_unit: TurnUnit::Windows,
            max_steps_per_window: 20,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 < self.w_min && self.w_min <= self.w_max && self.w_max.is_finite()) {
            return Err(format!("window bounds must satisfy 0 < w_min <= w_max, got ({}, {})", self.w_min, self.w_max));
        }
        if self.max_turns < 1 {
            return Err("max_turns must be >= 1".into());
        }
        if self.max_steps_per_window < 1 {
            return Err("max_steps_per_window must be >= 1".into());
        }
        if self.system == SystemLabel::HumanMixed {
            return Err("the simulator runs PD, S1 or S2 only".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error("invalid seed: {0}")]
    Seed(String),
    #[error("agent failed after {} message(s): {source}", partial.messages.len())]
    Agent {
        #[source]
        source: AgentError,
        partial: Box<Transcript>,
    },
}

/// Backends for both speakers plus the memory summarizer.
#[derive(Clone)]
pub struct DuetBackends {
    pub a: Arc<dyn ChatBackend>,
    pub b: Arc<dyn ChatBackend>,
    pub summarizer: Arc<dyn ChatBackend>,
}

impl DuetBackends {
    fn for_side(&self, side: Side) -> &dyn ChatBackend {
        match side {
            Side::A => self.a.as_ref(),
            Side::B => self.b.as_ref(),
        }
    }
}

/// Everything needed to run duets except the backends.
#[derive(Debug, Clone, Default)]
pub struct Simulator {
    pub sim: SimConfig,
    pub agent: AgentConfig,
    pub baseline: BaselineConfig,
    pub request: RequestDefaults,
}

struct Run<'a> {
    sim: &'a Simulator,
    agent: StepwiseAgent,
    baselines: Baselines,
    backends: &'a DuetBackends,
    states: [AgentState; 2],
    transcript: Transcript,
    clock: f64,
}

impl Run<'_> {
    fn fail(self, source: AgentError) -> SimError {
        SimError::Agent {
            source,
            partial: Box::new(self.transcript),
        }
    }

    async fn deliver(&mut self, side: Side, step: AgentStep) {
        let speaker = self.states[side.index()].persona.name.clone();
        let at = self.clock;
        self.clock += step.delay_s;
        if let Action::Respond(text) = &step.action {
            let msg = Message::new(speaker.clone(), text.clone(), self.clock, Origin::Agent);
            self.transcript.messages.push(msg.clone());
            for state in self.states.iter_mut() {
                if let Err(e) = self.agent.observe(state, msg.clone(), self.backends.summarizer.as_ref()).await {
                    tracing::warn!(error = %e, "summary refresh failed; retrying on the next trigger");
                }
            }
        }
        self.transcript.steps.push(StepRecord { speaker, at, step });
    }

    async fn stepwise_window(&mut self, mut ws: WindowState, record: &mut WindowRecord) -> Result<(), AgentError> {
        let side = ws.holder;
        for _ in 0..self.sim.sim.max_steps_per_window {
            let backend = self.backends.for_side(side);
            let step = self.agent.decide(&self.states[side.index()], backend).await?;
            let (action, delay) = match step.action {
                Action::Respond(_) => (WindowAction::Response, step.delay_s),
                Action::Wait => (WindowAction::Wait, step.delay_s),
            };
            self.deliver(side, step).await;
            ws = step_window(ws, action, delay);
            record.remaining.push(ws.remaining_s);
            if action == WindowAction::Wait {
                record.end = WindowEnd::Wait;
                return Ok(());
            }
            if ws.transfer_due() {
                record.end = WindowEnd::Exhausted;
                return Ok(());
            }
        }
        record.end = WindowEnd::StepCap;
        Ok(())
    }

    async fn baseline_window(&mut self, mut ws: WindowState, record: &mut WindowRecord) -> Result<(), AgentError> {
        let side = ws.holder;
        let state = &self.states[side.index()];
        let backend = self.backends.for_side(side);
        let steps = match self.sim.sim.system {
            SystemLabel::Pd => self.baselines.pd_generate(state, backend).await?,
            _ => self.baselines.s1_generate(state, backend).await?,
        };
        record.end = WindowEnd::Finished;
        for step in steps {
            let delay = step.delay_s;
            self.deliver(side, step).await;
            ws = step_window(ws, WindowAction::Response, delay);
            record.remaining.push(ws.remaining_s);
            if ws.transfer_due() {
                record.end = WindowEnd::Exhausted;
                break;
            }
        }
        Ok(())
    }
}

impl Simulator {
    /// Runs one duet from `seed`. `stream` selects an independent RNG stream
    /// so that a batch of seeds sharing one `rng_seed` stays reproducible in
    /// any execution order.
    pub async fn run_duet(&self, seed: &SeedSample, backends: &DuetBackends, stream: u64) -> Result<Transcript, SimError> {
        self.sim.validate().map_err(SimError::Config)?;
        self.agent.validate().map_err(|e| SimError::Config(e.to_string()))?;
        self.baseline.validate().map_err(|e| SimError::Config(e.to_string()))?;
        seed.check().map_err(SimError::Seed)?;

        let mut rng = ChaCha8Rng::seed_from_u64(self.sim.rng_seed);
        rng.set_stream(stream);

        let states = [
            AgentState::from_seed(seed, Side::A, &self.agent).map_err(|e| SimError::Seed(e.to_string()))?,
            AgentState::from_seed(seed, Side::B, &self.agent).map_err(|e| SimError::Seed(e.to_string()))?,
        ];
        let mut transcript = Transcript::new(seed.clone(), self.sim.system);
        transcript.meta = Some(SimMeta {
            rng_algorithm: RNG_ALGORITHM.into(),
            rng_seed: self.sim.rng_seed,
            rng_stream: stream,
            windows: Vec::new(),
        });
        let last = seed.recent_conversations.last();
        let clock = last.map_or(0.0, |m| m.timestamp);
        // The floor opens with whoever did not speak last.
        let mut holder = last
            .and_then(|m| seed.side_of(&m.role))
            .map_or(Side::A, Side::other);

        let mut run = Run {
            sim: self,
            agent: StepwiseAgent::new(self.agent.clone(), self.request.clone()),
            baselines: Baselines {
                cfg: self.baseline.clone(),
                agent_cfg: self.agent.clone(),
                request: self.request.clone(),
            },
            backends,
            states,
            transcript,
            clock,
        };

        let mut turns = 0;
        let window_cap = self.sim.max_turns.saturating_mul(10);
        let mut windows = 0;
        while turns < self.sim.max_turns && windows < window_cap {
            let w = sample_window(&mut rng, self.sim.w_min, self.sim.w_max);
            let ws = WindowState::open(holder, w);
            let mut record = WindowRecord {
                holder,
                window_s: w,
                remaining: Vec::new(),
                end: WindowEnd::Finished,
            };
            let before = run.transcript.messages.len();
            let outcome = match self.sim.system {
                SystemLabel::S2 => run.stepwise_window(ws, &mut record).await,
                _ => run.baseline_window(ws, &mut record).await,
            };
            push_window(&mut run.transcript, record);
            if let Err(e) = outcome {
                return Err(run.fail(e));
            }
            windows += 1;
            let spoke = run.transcript.messages.len() > before;
            if self.sim.turn_unit == TurnUnit::Windows || spoke {
                turns += 1;
            }
            holder = holder.other();
        }
        Ok(run.transcript)
    }

    /// Runs every seed with bounded concurrency; results keep corpus order.
    pub async fn run_corpus<F>(&self, seeds: &[SeedSample], parallelism: usize, mut backends_for: F) -> Vec<Result<Transcript, SimError>>
    where
        F: FnMut(usize, &SeedSample) -> DuetBackends,
    {
        let jobs: Vec<(usize, DuetBackends)> = seeds.iter().enumerate().map(|(i, s)| (i, backends_for(i, s))).collect();
        stream::iter(jobs)
            .map(|(i, b)| async move { self.run_duet(&seeds[i], &b, i as u64).await })
            .buffered(parallelism.max(1))
            .collect()
            .await
    }
}

fn push_window(t: &mut Transcript, record: WindowRecord) {
    if let Some(meta) = t.meta.as_mut() {
        meta.windows.push(record);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;
    use crate::dialogue::Persona;

    fn seed() -> SeedSample {
        SeedSample {
            id: Some("s".into()),
            topic: "weekend".into(),
            characters: [Persona::new("Ann", "likes tea"), Persona::new("Bo", "likes coffee")],
            recent_conversations: vec![Message::seed("Bo", "morning", 10.0)],
            assigned_topic: None,
        }
    }

    fn backends(a: ScriptedBackend, b: ScriptedBackend) -> DuetBackends {
        DuetBackends {
            a: Arc::new(a),
            b: Arc::new(b),
            summarizer: Arc::new(ScriptedBackend::constant("summary")),
        }
    }

    fn sim(system: SystemLabel, turns: usize) -> Simulator {
        Simulator {
            sim: SimConfig {
                system,
                max_turns: turns,
                rng_seed: 3,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[tokio::test]
    async fn s2_two_turns() {
        let a = ScriptedBackend::new(
            ["<think>x</think><response>hi</response>", "<think>done</think><wait>wait</wait>"],
            0.0,
        );
        let b = ScriptedBackend::new(
            ["<think></think><response>hello</response>", "<think></think><wait>wait</wait>"],
            0.0,
        );
        let t = sim(SystemLabel::S2, 2).run_duet(&seed(), &backends(a, b), 0).await.unwrap();
        // Ann opens because Bo spoke last.
        let got: Vec<(&str, &str)> = t.messages.iter().map(|m| (m.role.as_str(), m.content.as_str())).collect();
        assert_eq!(got, [("Ann", "hi"), ("Bo", "hello")]);
        // hi: 0.02*1 + 0.2*2; wait: 0.02*4; hello: 0.2*5
        let hi = 10.0 + (0.02 * 1.0 + 0.2 * 2.0);
        assert!((t.messages[0].timestamp - hi).abs() < 1e-12);
        let hello = hi + 0.02 * 4.0 + 0.2 * 5.0;
        assert!((t.messages[1].timestamp - hello).abs() < 1e-12);
        assert_eq!(t.steps.len(), 4);
        t.check().unwrap();
        let meta = t.meta.unwrap();
        assert_eq!(meta.windows.len(), 2);
        assert_eq!(meta.windows[0].end, WindowEnd::Wait);
    }

    #[tokio::test]
    async fn pd_two_turns_alternate_runs() {
        let a = ScriptedBackend::constant("Hi! Ok.");
        let b = ScriptedBackend::constant("Hi! Ok.");
        let t = sim(SystemLabel::Pd, 2).run_duet(&seed(), &backends(a, b), 0).await.unwrap();
        let roles: Vec<&str> = t.messages.iter().map(|m| m.role.as_str()).collect();
        assert_eq!(roles, ["Ann", "Ann", "Bo", "Bo"]);
        assert!(t.steps.iter().all(|s| !s.step.is_wait()));
        assert_eq!(t.meta.unwrap().windows[0].end, WindowEnd::Finished);
    }

    #[tokio::test]
    async fn immediate_wait_single_turn() {
        let a = ScriptedBackend::new(["<think>hmm</think><wait>wait</wait>"], 0.0);
        let b = ScriptedBackend::new(Vec::<String>::new(), 0.0);
        let t = sim(SystemLabel::S2, 1).run_duet(&seed(), &backends(a, b), 0).await.unwrap();
        assert!(t.messages.is_empty());
        let meta = t.meta.unwrap();
        assert_eq!(meta.windows.len(), 1);
        assert_eq!(meta.windows[0].remaining, [0.0]);
    }

    #[tokio::test]
    async fn errors_carry_partial_transcript() {
        let a = ScriptedBackend::new(["<think></think><response>one</response>"], 0.0);
        let b = ScriptedBackend::new(Vec::<String>::new(), 0.0);
        let err = sim(SystemLabel::S2, 3).run_duet(&seed(), &backends(a, b), 0).await.unwrap_err();
        match err {
            SimError::Agent { partial, .. } => assert_eq!(partial.messages.len(), 1),
            other => panic!("unexpected {other}"),
        }
    }

    #[tokio::test]
    async fn speaking_window_unit_skips_silent_windows() {
        let a = ScriptedBackend::new(
            [
                "<think></think><wait>wait</wait>",
                "<think></think><response>now</response>",
                "<think></think><wait>wait</wait>",
            ],
            0.0,
        );
        let b = ScriptedBackend::new(["<think></think><wait>wait</wait>"], 0.0);
        let mut s = sim(SystemLabel::S2, 1);
        s.sim.turn_unit = TurnUnit::SpeakingWindows;
        let t = s.run_duet(&seed(), &backends(a, b), 0).await.unwrap();
        assert_eq!(t.messages.len(), 1);
        assert_eq!(t.meta.unwrap().windows.len(), 3);
    }

    #[tokio::test]
    async fn rejects_bad_config() {
        let mut s = sim(SystemLabel::S2, 1);
        s.sim.w_min = 0.0;
        let b = backends(ScriptedBackend::constant("x"), ScriptedBackend::constant("x"));
        assert!(matches!(s.run_duet(&seed(), &b, 0).await, Err(SimError::Config(_))));
    }
}
