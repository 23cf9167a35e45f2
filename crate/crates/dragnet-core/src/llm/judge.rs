//! Answer grading.
//!
//! The model judge fills a rubric prompt and expects the reply to end with a
//! bare integer score. One malformed reply earns one reprompt; a second
//! malformed reply surfaces as an error so the caller records the question
//! as unscored instead of inventing a zero. `lexical_score` is the cheap
//! model-free alternative for runs without a grading backend.

use super::{make_backend, BackendConfig, ChatBackend, ChatMessage, LlmError};
use crate::corpus::word_tokens;

const JUDGE_PROMPT: &str = include_str!("../../assets/judge_prompt.txt");

const REPROMPT: &str = "Your previous reply did not end with an integer score. \
Reply again: reasoning on earlier lines, and a final line containing only a \
single integer from 0 to 100.";

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeVerdict {
    pub score: f64,
    pub rationale: String,
}

/// Grades `answer` against `reference` using the configured backend.
pub fn judge(
    question: &str,
    reference: &str,
    answer: &str,
    cfg: &BackendConfig,
) -> Result<JudgeVerdict, LlmError> {
    let backend = make_backend(cfg)?;
    judge_with_backend(question, reference, answer, backend.as_ref())
}

pub fn judge_with_backend(
    question: &str,
    reference: &str,
    answer: &str,
    backend: &dyn ChatBackend,
) -> Result<JudgeVerdict, LlmError> {
    let filled = JUDGE_PROMPT
        .replace("{question}", question)
        .replace("{reference}", reference)
        .replace("{answer}", answer);
    let mut messages = vec![
        ChatMessage::system("You are a strict grader. Follow the rubric exactly."),
        ChatMessage::user(filled),
    ];

    let first = backend.chat(&messages)?;
    if let Some(score) = trailing_integer(&first.content) {
        return Ok(verdict(score, &first.content));
    }

    messages.push(first.clone());
    messages.push(ChatMessage::user(REPROMPT));
    let second = backend.chat(&messages)?;
    match trailing_integer(&second.content) {
        Some(score) => Ok(verdict(score, &second.content)),
        None => Err(LlmError::JudgeParseError(format!(
            "no trailing integer in either reply; last reply starts {:?}",
            second.content.chars().take(80).collect::<String>()
        ))),
    }
}

fn verdict(raw: i64, reply: &str) -> JudgeVerdict {
    JudgeVerdict { score: raw.clamp(0, 100) as f64, rationale: reply.trim().to_string() }
}

/// Extracts the integer the reply ends with, if any.
fn trailing_integer(reply: &str) -> Option<i64> {
    let trimmed = reply.trim_end();
    let run: String = trimmed
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    if run.is_empty() {
        return None;
    }
    Some(run.parse::<i64>().unwrap_or(i64::MAX))
}

/// Token-level F1 between reference and answer, scaled to 0..100.
///
/// Tokens are counted as multisets, so repeating a matched word does not
/// inflate the score. Two empty texts count as a perfect match.
pub fn lexical_score(reference: &str, answer: &str) -> f64 {
    let ref_tokens = word_tokens(reference);
    let ans_tokens = word_tokens(answer);
    if ref_tokens.is_empty() && ans_tokens.is_empty() {
        return 100.0;
    }
    if ref_tokens.is_empty() || ans_tokens.is_empty() {
        return 0.0;
    }
    let mut counts = std::collections::BTreeMap::new();
    for t in &ref_tokens {
        *counts.entry(t.as_str()).or_insert(0usize) += 1;
    }
    let mut overlap = 0usize;
    for t in &ans_tokens {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / ans_tokens.len() as f64;
    let recall = overlap as f64 / ref_tokens.len() as f64;
    100.0 * 2.0 * precision * recall / (precision + recall)
}
