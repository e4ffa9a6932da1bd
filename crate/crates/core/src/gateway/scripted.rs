use std::path::Path;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{last_user, ChatBackend, ChatTurn, GatewayError};

/// One scripted mapping. `key` matches the last user turn exactly, or
/// as a set of ` && `-separated substrings that must all occur.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    pub key: String,
    pub replies: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    /// Replies for prompts that match no rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Vec<String>>,
}

impl Script {
    pub fn from_path(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| GatewayError::Config(format!("script {}: {e}", path.display())))
    }

    pub fn rule(mut self, key: impl Into<String>, replies: &[&str]) -> Self {
        self.rules.push(ScriptRule {
            key: key.into(),
            replies: replies.iter().map(|s| s.to_string()).collect(),
        });
        self
    }

    pub fn with_default(mut self, replies: &[&str]) -> Self {
        self.default = Some(replies.iter().map(|s| s.to_string()).collect());
        self
    }
}

/// Canned replies keyed by prompt. Each key cycles through its replies in order.
#[derive(Debug)]
pub struct ScriptedBackend {
    script: Script,
    cursors: Mutex<Vec<usize>>,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        let slots = script.rules.len() + 1;
        Self { script, cursors: Mutex::new(vec![0; slots]) }
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let script = pairs.into_iter().fold(Script::default(), |s, (k, v)| s.rule(k, &[v]));
        Self::new(script)
    }

    fn find(&self, prompt: &str) -> Option<(usize, &[String])> {
        let rules = &self.script.rules;
        if let Some(i) = rules.iter().position(|r| r.key == prompt) {
            return Some((i, &rules[i].replies));
        }
        if let Some(i) = rules
            .iter()
            .position(|r| r.key.split(" && ").all(|part| prompt.contains(part)))
        {
            return Some((i, &rules[i].replies));
        }
        self.script.default.as_deref().map(|d| (rules.len(), d))
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete_n(&self, turns: &[ChatTurn], n: usize) -> Result<Vec<String>, GatewayError> {
        let prompt = last_user(turns);
        let (slot, replies) = self
            .find(prompt)
            .filter(|(_, r)| !r.is_empty())
            .ok_or_else(|| GatewayError::ScriptKeyMissing(prompt.chars().take(120).collect()))?;
        let mut cursors = self.cursors.lock();
        let start = cursors[slot];
        cursors[slot] += n;
        Ok((start..start + n).map(|i| replies[i % replies.len()].clone()).collect())
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::complete;

    #[test]
    fn exact_key_echo() {
        let b = ScriptedBackend::from_pairs([("Q1", "A1")]);
        assert_eq!(complete(&b, &[ChatTurn::user("Q1")]).unwrap(), "A1");
    }

    #[test]
    fn missing_key_is_an_error() {
        let b = ScriptedBackend::from_pairs([("Q1", "A1")]);
        assert!(matches!(
            complete(&b, &[ChatTurn::user("Q2")]),
            Err(GatewayError::ScriptKeyMissing(_))
        ));
    }

    #[test]
    fn replies_cycle_in_order() {
        let b = ScriptedBackend::new(Script::default().rule("q", &["a", "b", "c"]));
        let turns = [ChatTurn::user("q")];
        assert_eq!(b.complete_n(&turns, 2).unwrap(), vec!["a", "b"]);
        assert_eq!(b.complete_n(&turns, 2).unwrap(), vec!["c", "a"]);
    }

    #[test]
    fn substring_conjunction_and_default() {
        let b = ScriptedBackend::new(
            Script::default()
                .rule("Transformation: deduction && Query: moon", &["deduced"])
                .with_default(&["fallback"]),
        );
        let hit = "Task: transform\nTransformation: deduction\nQuery: moon landing";
        assert_eq!(complete(&b, &[ChatTurn::user(hit)]).unwrap(), "deduced");
        assert_eq!(complete(&b, &[ChatTurn::user("other")]).unwrap(), "fallback");
    }

    #[test]
    fn exact_match_wins_over_substring() {
        let b = ScriptedBackend::new(Script::default().rule("a", &["sub"]).rule("abc", &["exact"]));
        assert_eq!(complete(&b, &[ChatTurn::user("abc")]).unwrap(), "exact");
    }
}
