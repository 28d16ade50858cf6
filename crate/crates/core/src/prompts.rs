//! Bundled prompt templates and placeholder substitution.

use crate::dialogue::Message;

pub const AGENT: &str = include_str!("../prompts/agent.txt");
pub const SUMMARIZE: &str = include_str!("../prompts/summarize.txt");
pub const ROLE_ID: &str = include_str!("../prompts/role_id.txt");
pub const REWRITE: &str = include_str!("../prompts/rewrite.txt");
pub const REWRITE_EXAMPLES: &str = include_str!("../prompts/rewrite_examples.json");
pub const CLUSTER_LEVEL1: &str = include_str!("../prompts/cluster_level1.txt");
pub const CLUSTER_LEVEL2: &str = include_str!("../prompts/cluster_level2.txt");
pub const ASSIGN: &str = include_str!("../prompts/assign.txt");
pub const PD: &str = include_str!("../prompts/pd.txt");
pub const S1: &str = include_str!("../prompts/s1.txt");
pub const PERSONA: &str = include_str!("../prompts/persona.txt");
pub const TOPIC: &str = include_str!("../prompts/topic.txt");
pub const EXPERIENCE_JUDGE: &str = include_str!("../prompts/experience_judge.txt");

/// Replaces every occurrence of each placeholder with its value.
///
/// Substitution is single-pass over the template, so values that happen to
/// contain placeholder text are not expanded again.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while !rest.is_empty() {
        for (key, value) in vars {
            if let Some(tail) = rest.strip_prefix(key) {
                out.push_str(value);
                rest = tail;
                continue 'outer;
            }
        }
        let ch = rest.chars().next().expect("non-empty");
        out.push(ch);
        rest = &rest[ch.len_utf8()..];
    }
    out
}

/// Renders messages as `name: content` lines.
pub fn history_lines<'a>(messages: impl IntoIterator<Item = &'a Message>) -> String {
    messages
        .into_iter()
        .map(|m| format!("{}: {}", m.role, m.content))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_is_single_pass() {
        let out = fill("<|A|> and <|B|>", &[("<|A|>", "<|B|>"), ("<|B|>", "x")]);
        assert_eq!(out, "<|B|> and x");
    }

    #[test]
    fn templates_keep_their_placeholders() {
        for key in ["<|HISTORY|>", "<|NAME1|>", "<|NAME2|>", "<|PERSONALITY2|>", "<|TOPIC|>"] {
            assert!(AGENT.contains(key), "{key}");
        }
        assert!(ROLE_ID.contains("{dialogue}"));
        assert!(SUMMARIZE.contains("<|EXISTING_SUMMARY|>") && SUMMARIZE.contains("<|CONVERSATIONS|>"));
        assert!(ASSIGN.contains("{topics_list}") && ASSIGN.contains("{topics_json}"));
        let examples: serde_json::Value = serde_json::from_str(REWRITE_EXAMPLES).unwrap();
        assert_eq!(examples.as_array().unwrap().len(), 5);
    }
}
