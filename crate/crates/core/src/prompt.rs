//! Generator prompt rendering.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PREAMBLE: &str = "Assuming there is a seeker of knowledge who engages in a conversation (named \"apprentice\" / \"user\") with a wise person who has access to knowledge (named \"wizard\" / \"assistant\"), I will provide the history of their conversation and the available reference knowledge as follows:";
pub const HISTORY_HEADER: &str = "History of conversation:";
pub const KNOWLEDGE_HEADER: &str = "Reference knowledge:";
const TAIL_HEAD: &str = "As the wizard/assistant, please continue the dialogue with the apprentice/user, keeping in mind the history of their conversation";
const TAIL_WITH_KNOWLEDGE: &str = " and the available reference knowledge.";
const TAIL_INTERNAL: &str = " and leveraging your knowledge.";
const TAIL_END: &str = " Provide a response of less than 20 words.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    WithKnowledge,
    InternalOnly,
}

impl FromStr for PromptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "with_knowledge" => Ok(PromptMode::WithKnowledge),
            "internal_only" => Ok(PromptMode::InternalOnly),
            other => Err(Error::validation(format!(
                "unknown prompt mode `{other}` (expected with_knowledge or internal_only)"
            ))),
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptMode::WithKnowledge => "with_knowledge",
            PromptMode::InternalOnly => "internal_only",
        })
    }
}

fn one_line(s: &str) -> String {
    s.replace("\r\n", " ").replace(['\n', '\r'], " ")
}

/// Lines are joined with `\n` and the result has no trailing newline.
/// Embedded line breaks in turns or knowledge become spaces.
pub fn render_prompt<H: AsRef<str>, K: AsRef<str>>(history: &[H], pool: &[K], mode: PromptMode) -> Result<String> {
    if mode == PromptMode::WithKnowledge && pool.is_empty() {
        return Err(Error::validation("with_knowledge prompt needs a non-empty knowledge pool"));
    }
    let mut lines = vec![PREAMBLE.to_string(), HISTORY_HEADER.to_string()];
    lines.extend(history.iter().map(|h| one_line(h.as_ref())));
    let k = match mode {
        PromptMode::WithKnowledge => {
            lines.push(KNOWLEDGE_HEADER.to_string());
            lines.extend(pool.iter().map(|p| one_line(p.as_ref())));
            TAIL_WITH_KNOWLEDGE
        }
        PromptMode::InternalOnly => TAIL_INTERNAL,
    };
    lines.push(format!("{TAIL_HEAD}{k}{TAIL_END}"));
    Ok(lines.join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knowledge_block_present_only_with_knowledge() {
        let p = render_prompt(&["hi"], &["a fact", "another"], PromptMode::WithKnowledge).unwrap();
        let lines: Vec<&str> = p.lines().collect();
        let at = lines.iter().position(|l| *l == KNOWLEDGE_HEADER).unwrap();
        assert_eq!(&lines[at + 1..at + 3], &["a fact", "another"]);
        assert!(p.ends_with("and the available reference knowledge. Provide a response of less than 20 words."));

        let q = render_prompt(&["hi"], &["a fact"], PromptMode::InternalOnly).unwrap();
        assert!(!q.contains(KNOWLEDGE_HEADER));
        assert!(q.contains("leveraging your knowledge"));
    }

    #[test]
    fn empty_pool_rejected_with_knowledge() {
        assert!(render_prompt::<&str, &str>(&["hi"], &[], PromptMode::WithKnowledge).is_err());
        assert!(render_prompt::<&str, &str>(&["hi"], &[], PromptMode::InternalOnly).is_ok());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("internal_only".parse::<PromptMode>().unwrap(), PromptMode::InternalOnly);
        assert!("both".parse::<PromptMode>().is_err());
        assert_eq!(serde_json::to_string(&PromptMode::WithKnowledge).unwrap(), "\"with_knowledge\"");
    }
}
