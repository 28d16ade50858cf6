//! Parser for the tagged model output of one agent step.
//!
//! Grammar (whitespace between blocks is ignored):
//!
//! ```text
//! step     := ws think ws action ws EOF
//! think    := "<think>" TEXT close(think)
//! action   := "<response>" TEXT close(response) | "<wait>" TEXT close(wait)
//! close(t) := "</" t ">" | "<\" t ">"
//! ```

use thiserror::Error;

use crate::dialogue::{Action, AgentStep};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed step output: {reason}")]
pub struct MalformedOutput {
    pub reason: Malformation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Malformation {
    MissingThink,
    UnclosedTag(&'static str),
    MissingAction,
    BothActions,
    EmptyResponse,
    LeadingText,
    TrailingText,
}

impl std::fmt::Display for Malformation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Malformation::MissingThink => f.write_str("no <think> segment"),
            Malformation::UnclosedTag(t) => write!(f, "<{t}> is never closed"),
            Malformation::MissingAction => f.write_str("no <response> or <wait> segment"),
            Malformation::BothActions => f.write_str("both <response> and <wait> present"),
            Malformation::EmptyResponse => f.write_str("empty response text"),
            Malformation::LeadingText => f.write_str("text before <think>"),
            Malformation::TrailingText => f.write_str("unparsed text after the action"),
        }
    }
}

fn malformed(reason: Malformation) -> MalformedOutput {
    MalformedOutput { reason }
}

/// Splits `s` (which must start with `<tag>`) into the tag body and the rest
/// after the closing tag. Accepts both `</tag>` and `<\tag>`.
fn take_block<'a>(s: &'a str, tag: &'static str) -> Option<Result<(&'a str, &'a str), MalformedOutput>> {
    let open = format!("<{tag}>");
    let body = s.strip_prefix(open.as_str())?;
    let slash = format!("</{tag}>");
    let backslash = format!("<\\{tag}>");
    let end = match (body.find(&slash), body.find(&backslash)) {
        (Some(a), Some(b)) => a.min(b),
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => return Some(Err(malformed(Malformation::UnclosedTag(tag)))),
    };
    // Both closing spellings have the same length.
    Some(Ok((&body[..end], &body[end + slash.len()..])))
}

/// Parses one model reply into an [`AgentStep`]. `delay_s` is left at zero.
pub fn parse_step(raw: &str) -> Result<AgentStep, MalformedOutput> {
    let s = raw.trim_start();
    let (think, rest) = match take_block(s, "think") {
        Some(r) => r?,
        None if s.contains("<think>") => return Err(malformed(Malformation::LeadingText)),
        None => return Err(malformed(Malformation::MissingThink)),
    };
    let rest = rest.trim_start();

    let (action, tail) = if let Some(r) = take_block(rest, "response") {
        let (text, tail) = r?;
        let text = text.trim();
        if text.is_empty() {
            return Err(malformed(Malformation::EmptyResponse));
        }
        (Action::Respond(text.to_string()), tail)
    } else if let Some(r) = take_block(rest, "wait") {
        let (_, tail) = r?;
        (Action::Wait, tail)
    } else {
        return Err(malformed(Malformation::MissingAction));
    };

    let tail = tail.trim();
    if !tail.is_empty() {
        if tail.starts_with("<response>") || tail.starts_with("<wait>") {
            return Err(malformed(Malformation::BothActions));
        }
        return Err(malformed(Malformation::TrailingText));
    }
    Ok(AgentStep::new(think, action))
}

/// Renders a step in the canonical slash-closing form.
pub fn render_step(step: &AgentStep) -> String {
    match &step.action {
        Action::Respond(text) => format!("<think>{}</think>\n<response>{}</response>", step.think, text),
        Action::Wait => format!("<think>{}</think>\n<wait>wait</wait>", step.think),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backslash_wait_form() {
        let step = parse_step("<think>she is venting<\\think> <wait>wait<\\wait>").unwrap();
        assert_eq!(step.think, "she is venting");
        assert_eq!(step.action, Action::Wait);
        assert_eq!(step.n_think, 14);
        assert_eq!(step.n_response, 0);
        assert_eq!(step.delay_s, 0.0);
    }

    #[test]
    fn backslash_respond_form() {
        let step = parse_step("<think>t<\\think> <response>hi!<\\response>").unwrap();
        assert_eq!(step.think, "t");
        assert_eq!(step.action, Action::Respond("hi!".into()));
        assert_eq!((step.n_think, step.n_response), (1, 3));
    }

    #[test]
    fn untagged_text_is_malformed() {
        assert_eq!(parse_step("hello there").unwrap_err().reason, Malformation::MissingThink);
    }

    #[test]
    fn two_actions_are_malformed() {
        let err = parse_step("<think>a</think><response>b</response><wait>w</wait>").unwrap_err();
        assert_eq!(err.reason, Malformation::BothActions);
        let err = parse_step("<think>a</think><wait>w</wait><response>b</response>").unwrap_err();
        assert_eq!(err.reason, Malformation::BothActions);
    }

    #[test]
    fn empty_think_is_fine_empty_response_is_not() {
        let step = parse_step("<think></think><response>ok</response>").unwrap();
        assert_eq!(step.n_think, 0);
        assert_eq!(
            parse_step("<think>x</think><response>  </response>").unwrap_err().reason,
            Malformation::EmptyResponse
        );
    }

    #[test]
    fn whitespace_and_newlines() {
        let raw = "\n  <think> line one\nline two </think>\n\n<response>  so tired  </response>\n";
        let step = parse_step(raw).unwrap();
        assert_eq!(step.think, " line one\nline two ");
        assert_eq!(step.response_text(), Some("so tired"));
        assert_eq!(step.n_response, 8);
    }

    #[test]
    fn mixed_closing_spellings() {
        let step = parse_step("<think>a<\\think><response>b</response>").unwrap();
        assert_eq!(step.response_text(), Some("b"));
    }

    #[test]
    fn unicode_counts_scalars() {
        let step = parse_step("<think>héllo</think><response>日本語</response>").unwrap();
        assert_eq!((step.n_think, step.n_response), (5, 3));
    }

    #[test]
    fn error_cases() {
        assert_eq!(parse_step("<think>a").unwrap_err().reason, Malformation::UnclosedTag("think"));
        assert_eq!(parse_step("<think>a</think>").unwrap_err().reason, Malformation::MissingAction);
        assert_eq!(
            parse_step("<think>a</think><response>b").unwrap_err().reason,
            Malformation::UnclosedTag("response")
        );
        assert_eq!(
            parse_step("<think>a</think><wait>w</wait> thanks").unwrap_err().reason,
            Malformation::TrailingText
        );
        assert_eq!(
            parse_step("Sure! <think>a</think><wait>w</wait>").unwrap_err().reason,
            Malformation::LeadingText
        );
    }

    #[test]
    fn render_then_parse() {
        let step = AgentStep::respond("thinking", "hey there");
        assert_eq!(parse_step(&render_step(&step)).unwrap(), step);
        let step = AgentStep::wait("");
        assert_eq!(parse_step(&render_step(&step)).unwrap(), step);
    }
}
