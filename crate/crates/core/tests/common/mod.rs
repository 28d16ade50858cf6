#![allow(dead_code)]

use rand::Rng;
use stepwise_core::dialogue::StepRecord;
use stepwise_core::{AgentStep, Message, Origin, Persona, SeedSample, SystemLabel, Transcript};

const WORDS: &[&str] = &[
    "hi", "Hi", "ok", "lol", "yeah", "no", "really?", "sure.", "the", "a", "café", "naïve", "😀", "good", "bad",
    "what", "is", "it", "so", "haha", "weekend", "plans", "I'm", "you're", "tired", "fine!",
];

pub fn sentence(rng: &mut impl Rng, max_words: usize) -> String {
    let n = rng.random_range(1..=max_words);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(WORDS[rng.random_range(0..WORDS.len())]);
    }
    // Occasionally add irregular spacing; tokenization must ignore it.
    let sep = if rng.random_bool(0.1) { "  " } else { " " };
    out.join(sep)
}

pub fn seed(rng: &mut impl Rng, id: usize) -> SeedSample {
    let names = ["Ann", "Bo"];
    let n = rng.random_range(1..=8);
    let mut t = 0.0;
    let mut msgs = Vec::new();
    for _ in 0..n {
        t += rng.random_range(0.0..20.0);
        msgs.push(Message::seed(names[rng.random_range(0..2)], sentence(rng, 8), t));
    }
    SeedSample {
        id: Some(format!("seed-{id}")),
        topic: sentence(rng, 4),
        characters: [Persona::new("Ann", sentence(rng, 5)), Persona::new("Bo", sentence(rng, 5))],
        recent_conversations: msgs,
        assigned_topic: if rng.random_bool(0.3) { Some("music".into()) } else { None },
    }
}

/// A valid transcript of up to `max_msgs` generated messages; agent messages
/// carry matching respond steps.
pub fn transcript(rng: &mut impl Rng, id: usize, max_msgs: usize) -> Transcript {
    let seed = seed(rng, id);
    let mut t = seed.recent_conversations.last().map(|m| m.timestamp).unwrap_or(0.0);
    let system = [SystemLabel::Pd, SystemLabel::S1, SystemLabel::S2, SystemLabel::HumanMixed][rng.random_range(0..4)];
    let mut tr = Transcript::new(seed, system);
    let n = rng.random_range(0..=max_msgs);
    for _ in 0..n {
        t += rng.random_range(0.0..40.0);
        let role = ["Ann", "Bo"][rng.random_range(0..2)];
        let text = sentence(rng, 10);
        let origin = if system == SystemLabel::HumanMixed && role == "Ann" {
            Origin::Human
        } else {
            Origin::Agent
        };
        if origin == Origin::Agent {
            if rng.random_bool(0.2) {
                tr.steps.push(StepRecord {
                    speaker: role.into(),
                    at: t,
                    step: AgentStep::wait(sentence(rng, 6)),
                });
            }
            let mut step = AgentStep::respond(sentence(rng, 6), text.clone());
            step.delay_s = rng.random_range(0.0..30.0);
            step.t_system_s = rng.random_range(0.0..3.0);
            tr.steps.push(StepRecord {
                speaker: role.into(),
                at: t,
                step,
            });
        }
        tr.messages.push(Message::new(role, text, t, origin));
    }
    tr
}

// Brute-force reference implementations used as oracles.

pub fn brute_distinct(texts: &[&str], n: usize) -> f64 {
    let mut grams: Vec<Vec<String>> = Vec::new();
    for text in texts {
        let words: Vec<String> = text.split_whitespace().map(|w| w.to_lowercase()).collect();
        if words.len() < n {
            continue;
        }
        for i in 0..=words.len() - n {
            grams.push(words[i..i + n].to_vec());
        }
    }
    if grams.is_empty() {
        return 0.0;
    }
    let mut unique = 0;
    for i in 0..grams.len() {
        if !grams[..i].contains(&grams[i]) {
            unique += 1;
        }
    }
    unique as f64 / grams.len() as f64
}

pub fn brute_words(texts: &[&str]) -> f64 {
    let mut words = 0;
    for t in texts {
        let mut in_word = false;
        for c in t.chars() {
            if c.is_whitespace() {
                in_word = false;
            } else if !in_word {
                in_word = true;
                words += 1;
            }
        }
    }
    words as f64 / texts.len() as f64
}

pub fn brute_runs(roles: &[&str]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < roles.len() {
        let mut j = i;
        while j < roles.len() && roles[j] == roles[i] {
            j += 1;
        }
        runs.push(j - i);
        i = j;
    }
    runs
}

pub fn brute_acmc(roles: &[&str]) -> f64 {
    let changes = (1..roles.len()).filter(|&i| roles[i] != roles[i - 1]).count();
    roles.len() as f64 / (changes + 1) as f64
}
