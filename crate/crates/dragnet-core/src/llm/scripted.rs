//! Rule-driven backend for hermetic tests.
//!
//! A script is a JSONL file of rules checked in order against each request;
//! the first rule whose criteria all hold supplies the reply. The file must
//! end with a catch-all `{"default": true, ...}` rule so the backend can
//! always answer.

use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{validate_request, ChatBackend, ChatMessage, LlmError, Role};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regex: Option<String>,
}

impl MatchSpec {
    pub fn is_empty(&self) -> bool {
        self.turn_index.is_none() && self.contains.is_none() && self.regex.is_none()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(rename = "match", default, skip_serializing_if = "MatchSpec::is_empty")]
    pub match_spec: MatchSpec,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub default: bool,
    pub reply: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub once: bool,
}

impl ScriptRule {
    pub fn on_turn(turn_index: usize, reply: impl Into<String>) -> Self {
        Self {
            match_spec: MatchSpec { turn_index: Some(turn_index), ..MatchSpec::default() },
            reply: reply.into(),
            ..Self::default()
        }
    }

    pub fn on_contains(needle: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            match_spec: MatchSpec { contains: Some(needle.into()), ..MatchSpec::default() },
            reply: reply.into(),
            ..Self::default()
        }
    }

    pub fn fallback(reply: impl Into<String>) -> Self {
        Self { default: true, reply: reply.into(), ..Self::default() }
    }

    pub fn once(mut self) -> Self {
        self.once = true;
        self
    }
}

struct CompiledRule {
    rule: ScriptRule,
    regex: Option<regex::Regex>,
}

pub struct ScriptedBackend {
    rules: Vec<CompiledRule>,
    fired: Mutex<Vec<bool>>,
}

impl ScriptedBackend {
    pub fn from_path(path: &Path) -> Result<Self, LlmError> {
        let raw = fs::read_to_string(path).map_err(|e| LlmError::io(path, e))?;
        let mut rules = Vec::new();
        for (lineno, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rule: ScriptRule = serde_json::from_str(line).map_err(|e| {
                LlmError::ScriptError(format!(
                    "{}:{}: {e}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            rules.push(rule);
        }
        Self::from_rules(rules)
    }

    pub fn from_rules(rules: Vec<ScriptRule>) -> Result<Self, LlmError> {
        if rules.is_empty() {
            return Err(LlmError::ScriptError("script has no rules".into()));
        }
        let last = rules.len() - 1;
        let mut compiled = Vec::with_capacity(rules.len());
        for (i, rule) in rules.into_iter().enumerate() {
            if rule.default {
                if i != last {
                    return Err(LlmError::ScriptError(format!(
                        "rule {}: default rule must come last",
                        i + 1
                    )));
                }
                if !rule.match_spec.is_empty() {
                    return Err(LlmError::ScriptError(
                        "default rule cannot carry match criteria".into(),
                    ));
                }
                if rule.once {
                    return Err(LlmError::ScriptError(
                        "default rule cannot be marked once".into(),
                    ));
                }
            } else {
                if i == last {
                    return Err(LlmError::ScriptError(
                        "last rule must be the default rule".into(),
                    ));
                }
                if rule.match_spec.is_empty() {
                    return Err(LlmError::ScriptError(format!(
                        "rule {}: needs at least one match criterion",
                        i + 1
                    )));
                }
            }
            let regex = match &rule.match_spec.regex {
                Some(pat) => Some(regex::Regex::new(pat).map_err(|e| {
                    LlmError::ScriptError(format!("rule {}: bad regex: {e}", i + 1))
                })?),
                None => None,
            };
            compiled.push(CompiledRule { rule, regex });
        }
        let fired = Mutex::new(vec![false; compiled.len()]);
        Ok(Self { rules: compiled, fired })
    }
}

impl ChatBackend for ScriptedBackend {
    fn chat(&self, messages: &[ChatMessage]) -> Result<ChatMessage, LlmError> {
        validate_request(messages)?;
        let turn = messages.iter().filter(|m| m.role == Role::Assistant).count();
        let last = &messages.last().expect("non-empty").content;
        let mut fired = self.fired.lock().unwrap();
        for (i, c) in self.rules.iter().enumerate() {
            if c.rule.default {
                return Ok(ChatMessage::assistant(c.rule.reply.clone()));
            }
            if c.rule.once && fired[i] {
                continue;
            }
            let spec = &c.rule.match_spec;
            if let Some(t) = spec.turn_index {
                if t != turn {
                    continue;
                }
            }
            if let Some(needle) = &spec.contains {
                if !last.contains(needle.as_str()) {
                    continue;
                }
            }
            if let Some(re) = &c.regex {
                if !re.is_match(last) {
                    continue;
                }
            }
            fired[i] = true;
            return Ok(ChatMessage::assistant(c.rule.reply.clone()));
        }
        unreachable!("default rule is always last");
    }
}

/// Writes rules to a JSONL script file, one rule per line.
pub fn write_script(path: &Path, rules: &[ScriptRule]) -> Result<(), LlmError> {
    let mut out = String::new();
    for rule in rules {
        out.push_str(&serde_json::to_string(rule).expect("rule serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| LlmError::io(path, e))
}
