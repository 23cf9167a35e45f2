//! Iterative retrieval driven by the model itself.
//!
//! Instead of one retrieval pass, the model holds a conversation: it can
//! call chunk_search to pull evidence into a working set, chunk_delete to
//! evict what turned out to be noise, and it answers by replying without a
//! tool call. The loop enforces a turn limit, demands an answer when the
//! limit is hit, and records the whole episode as a deterministic
//! transcript.

mod context;
mod parser;
mod tools;

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::corpus::{count_tokens, TokenizerConfig};
use crate::index::Index;
use crate::llm::ChatBackend;
use crate::oneshot::Budget;

pub use context::drift_score;
pub use parser::{parse_assistant_message, ParsedMessage, ToolCall};
pub use tools::{SearchHit, ToolResult};

pub(crate) use context::{build_context, measure};
use tools::{exec_chunk_delete, exec_chunk_search, AgentState};

const FORCED_ANSWER_PROMPT: &str = "You have reached the turn limit. Answer now with \
the evidence already in your working set; do not call any more tools.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackRetriever {
    TopK,
    TokenConstrained,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentConfig {
    pub max_turns: usize,
    pub k_per_search: usize,
    pub fallback_on_first_search: bool,
    pub enable_chunk_delete: bool,
    pub fallback_retriever: FallbackRetriever,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_budget: Option<Budget>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_turns: 5,
            k_per_search: 5,
            fallback_on_first_search: true,
            enable_chunk_delete: true,
            fallback_retriever: FallbackRetriever::TopK,
            fallback_budget: None,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_turns == 0 {
            return Err(AgentError::ConfigInvalid("max_turns must be at least 1".into()));
        }
        if self.k_per_search == 0 {
            return Err(AgentError::ConfigInvalid("k_per_search must be at least 1".into()));
        }
        match (self.fallback_retriever, &self.fallback_budget) {
            (FallbackRetriever::TokenConstrained, None) => Err(AgentError::ConfigInvalid(
                "token_constrained fallback needs a fallback_budget".into(),
            )),
            (FallbackRetriever::TokenConstrained, Some(budget)) => budget
                .validate()
                .map_err(|e| AgentError::ConfigInvalid(format!("fallback_budget: {e}"))),
            (FallbackRetriever::TopK, Some(_)) => Err(AgentError::ConfigInvalid(
                "fallback_budget is only meaningful with the token_constrained fallback".into(),
            )),
            (FallbackRetriever::TopK, None) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub think_text: String,
    pub tool_calls: Vec<ToolCall>,
    pub tool_results: Vec<ToolResult>,
    pub working_set_after: Vec<String>,
    pub context_tokens_after: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answered,
    MaxTurnsExhausted,
    BackendError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub query: String,
    pub turns: Vec<Turn>,
    pub final_answer: Option<String>,
    pub termination: Termination,
    pub search_count: usize,
    pub fallback_executed: bool,
    pub drift_scores: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("agent config invalid: {0}")]
    ConfigInvalid(String),
    #[error("writing transcript {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Runs the tool-calling loop until the model answers, the turn limit
/// forces an answer, or the backend gives out. Everything that happens is
/// in the returned transcript; backend failures terminate the episode
/// rather than erroring out, so a partial transcript survives.
pub fn run_iterative(
    query: &str,
    index: &Index,
    backend: &dyn ChatBackend,
    tokenizer: &TokenizerConfig,
    cfg: &AgentConfig,
) -> Result<Transcript, AgentError> {
    cfg.validate()?;
    if count_tokens(query, tokenizer).unwrap_or(0) == 0 {
        return Err(AgentError::ConfigInvalid("query must contain at least one token".into()));
    }

    let mut state = AgentState::default();
    let mut turns: Vec<Turn> = Vec::new();
    let mut drift_scores: Vec<f64> = Vec::new();
    let mut consecutive_malformed = 0usize;

    let finish = |turns: Vec<Turn>,
                  state: &AgentState,
                  drift_scores: Vec<f64>,
                  final_answer: Option<String>,
                  termination: Termination| Transcript {
        query: query.to_string(),
        turns,
        final_answer,
        termination,
        search_count: state.search_count,
        fallback_executed: state.fallback_executed,
        drift_scores,
    };

    while turns.len() < cfg.max_turns {
        let messages = build_context(query, &turns, &state.working_set, cfg.enable_chunk_delete);
        let reply = match backend.chat(&messages) {
            Ok(r) => r,
            Err(_) => {
                return Ok(finish(turns, &state, drift_scores, None, Termination::BackendError))
            }
        };
        let parsed = parse_assistant_message(&reply.content);

        if let Some(answer) = parsed.final_answer {
            push_turn(
                &mut turns,
                parsed.think_text,
                Vec::new(),
                Vec::new(),
                &state,
                query,
                tokenizer,
                cfg,
            );
            return Ok(finish(turns, &state, drift_scores, Some(answer), Termination::Answered));
        }

        if parsed.tool_calls.is_empty() {
            consecutive_malformed += 1;
        } else {
            consecutive_malformed = 0;
        }

        let mut results: Vec<ToolResult> = parsed
            .errors
            .iter()
            .map(|e| ToolResult::Error { message: e.clone() })
            .collect();
        for call in &parsed.tool_calls {
            match call {
                ToolCall::ChunkSearch { query: q } => {
                    drift_scores.push(drift_score(query, q, index.embedder()));
                    results.push(exec_chunk_search(&mut state, index, query, q, cfg));
                }
                ToolCall::ChunkDelete { chunk_ids } => {
                    if cfg.enable_chunk_delete {
                        results.push(exec_chunk_delete(&mut state, chunk_ids));
                    } else {
                        results.push(ToolResult::Error {
                            message: "unknown tool `chunk_delete`".to_string(),
                        });
                    }
                }
            }
        }
        push_turn(
            &mut turns,
            parsed.think_text,
            parsed.tool_calls,
            results,
            &state,
            query,
            tokenizer,
            cfg,
        );

        if consecutive_malformed >= 2 {
            return Ok(finish(turns, &state, drift_scores, None, Termination::BackendError));
        }
    }

    // out of turns: one last exchange that demands an answer and executes
    // nothing, whatever the model replies with
    let mut messages = build_context(query, &turns, &state.working_set, cfg.enable_chunk_delete);
    messages.push(crate::llm::ChatMessage::user(FORCED_ANSWER_PROMPT));
    let reply = match backend.chat(&messages) {
        Ok(r) => r,
        Err(_) => return Ok(finish(turns, &state, drift_scores, None, Termination::BackendError)),
    };
    let parsed = parse_assistant_message(&reply.content);
    let answer = parsed
        .final_answer
        .unwrap_or_else(|| parser::text_outside_blocks(&reply.content));
    push_turn(&mut turns, parsed.think_text, Vec::new(), Vec::new(), &state, query, tokenizer, cfg);
    Ok(finish(turns, &state, drift_scores, Some(answer), Termination::MaxTurnsExhausted))
}

/// The iterative loop with the token-constrained first-turn fallback, so a
/// single episode gets both behaviors: model-directed search plus one
/// budgeted selection over the original query. The config must carry a
/// fallback budget.
pub fn run_combined(
    query: &str,
    index: &Index,
    backend: &dyn ChatBackend,
    tokenizer: &TokenizerConfig,
    cfg: &AgentConfig,
) -> Result<Transcript, AgentError> {
    if cfg.fallback_retriever != FallbackRetriever::TokenConstrained {
        return Err(AgentError::ConfigInvalid(
            "run_combined requires the token_constrained fallback".into(),
        ));
    }
    run_iterative(query, index, backend, tokenizer, cfg)
}

#[allow(clippy::too_many_arguments)]
fn push_turn(
    turns: &mut Vec<Turn>,
    think_text: String,
    tool_calls: Vec<ToolCall>,
    tool_results: Vec<ToolResult>,
    state: &AgentState,
    query: &str,
    tokenizer: &TokenizerConfig,
    cfg: &AgentConfig,
) {
    turns.push(Turn {
        index: turns.len(),
        think_text,
        tool_calls,
        tool_results,
        working_set_after: state.working_set.clone(),
        context_tokens_after: 0,
    });
    let rebuilt = build_context(query, turns, &state.working_set, cfg.enable_chunk_delete);
    let tokens = measure(&rebuilt, tokenizer);
    turns.last_mut().expect("just pushed").context_tokens_after = tokens;
}

/// Flattens a transcript into its event stream: per turn a turn_start, an
/// assistant event, then one event per tool call and result, and a single
/// final event. Each event carries the context size of its turn. No clocks
/// anywhere, so two identical episodes serialize identically.
pub fn transcript_events(t: &Transcript) -> Vec<serde_json::Value> {
    let mut events = Vec::new();
    for turn in &t.turns {
        let tokens = turn.context_tokens_after;
        events.push(json!({
            "event": "turn_start",
            "payload": { "index": turn.index },
            "context_tokens": tokens,
        }));
        events.push(json!({
            "event": "assistant",
            "payload": { "index": turn.index, "think_text": turn.think_text },
            "context_tokens": tokens,
        }));
        for call in &turn.tool_calls {
            events.push(json!({
                "event": "tool_call",
                "payload": call,
                "context_tokens": tokens,
            }));
        }
        for result in &turn.tool_results {
            events.push(json!({
                "event": "tool_result",
                "payload": result,
                "context_tokens": tokens,
            }));
        }
    }
    let last_tokens = t.turns.last().map_or(0, |turn| turn.context_tokens_after);
    events.push(json!({
        "event": "final",
        "payload": {
            "final_answer": t.final_answer,
            "termination": t.termination,
            "search_count": t.search_count,
            "fallback_executed": t.fallback_executed,
            "drift_scores": t.drift_scores,
        },
        "context_tokens": last_tokens,
    }));
    events
}

/// Writes the event stream as JSON lines.
pub fn write_transcript(t: &Transcript, path: &Path) -> Result<(), AgentError> {
    let io_err = |source| AgentError::Io { path: path.to_path_buf(), source };
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    for event in transcript_events(t) {
        writeln!(file, "{event}").map_err(io_err)?;
    }
    Ok(())
}
