//! Message assembly for the agent loop.
//!
//! Each backend call sees the full conversation rebuilt from the transcript
//! so far: system prompt with the advertised tools, the user query, then one
//! assistant and one tool message per action turn. Search results are
//! re-rendered against the current working set, so a chunk deleted later in
//! the episode collapses to a one-line tombstone instead of its full text.

use serde_json::Value;

use crate::corpus::{count_tokens, ChunkMeta, TokenizerConfig};
use crate::index::{embed, EmbedderConfig};
use crate::llm::ChatMessage;

use super::tools::{SearchHit, ToolResult};
use super::{ToolCall, Turn};

const SYSTEM_TEMPLATE: &str = include_str!("../../assets/agent_system_prompt.txt");
const TOOL_DEFS: &str = include_str!("../../assets/agent_tools.json");

pub(crate) fn tool_definitions(enable_chunk_delete: bool) -> Vec<Value> {
    let all: Vec<Value> = serde_json::from_str(TOOL_DEFS).expect("bundled tool defs parse");
    all.into_iter()
        .filter(|t| enable_chunk_delete || t["name"] != "chunk_delete")
        .collect()
}

pub(crate) fn system_prompt(enable_chunk_delete: bool) -> String {
    let defs = serde_json::to_string_pretty(&tool_definitions(enable_chunk_delete))
        .expect("tool defs serialize");
    SYSTEM_TEMPLATE.replace("{tools}", &defs)
}

fn render_meta(meta: &ChunkMeta) -> String {
    if meta.is_empty() {
        return String::new();
    }
    let mut parts = Vec::new();
    if !meta.years.is_empty() {
        let years: Vec<String> = meta.years.iter().map(|y| y.to_string()).collect();
        parts.push(format!("years: {}", years.join(", ")));
    }
    if !meta.locations.is_empty() {
        let locs: Vec<&str> = meta.locations.iter().map(String::as_str).collect();
        parts.push(format!("locations: {}", locs.join(", ")));
    }
    if !meta.entities.is_empty() {
        let ents: Vec<&str> = meta.entities.iter().map(String::as_str).collect();
        parts.push(format!("entities: {}", ents.join(", ")));
    }
    format!(" ({})", parts.join(" | "))
}

fn render_hit(hit: &SearchHit, working_set: &[String]) -> String {
    if working_set.iter().any(|id| id == &hit.chunk_id) {
        format!("[{}]{}\n{}", hit.chunk_id, render_meta(&hit.meta), hit.text)
    } else {
        format!("[{}] removed from working set", hit.chunk_id)
    }
}

fn render_result(result: &ToolResult, working_set: &[String]) -> String {
    match result {
        ToolResult::Search { hits } => {
            if hits.is_empty() {
                return "chunk_search returned no chunks".to_string();
            }
            let body: Vec<String> = hits.iter().map(|h| render_hit(h, working_set)).collect();
            format!("chunk_search returned {} chunks:\n\n{}", hits.len(), body.join("\n\n"))
        }
        ToolResult::Delete { deleted, unknown } => {
            let mut line = format!("chunk_delete removed {} chunks", deleted.len());
            if !deleted.is_empty() {
                line.push_str(&format!(" ({})", deleted.join(", ")));
            }
            if !unknown.is_empty() {
                line.push_str(&format!("; unknown ids: {}", unknown.join(", ")));
            }
            line
        }
        ToolResult::Error { message } => format!("tool error: {message}"),
    }
}

fn render_assistant(turn: &Turn) -> String {
    let mut out = String::new();
    if !turn.think_text.is_empty() {
        out.push_str(&format!("<think>{}</think>\n", turn.think_text));
    }
    for call in &turn.tool_calls {
        let args = match call {
            ToolCall::ChunkSearch { query } => serde_json::json!({ "query": query }),
            ToolCall::ChunkDelete { chunk_ids } => serde_json::json!({ "chunk_ids": chunk_ids }),
        };
        let body = serde_json::json!({ "name": call.name(), "arguments": args });
        out.push_str(&format!("<tool_call>{body}</tool_call>\n"));
    }
    out.trim_end().to_string()
}

/// Rebuilds the message list for the next backend call from the action turns
/// recorded so far. `working_set` is the current one, which is what makes
/// deleted chunks drop out of older search results.
pub(crate) fn build_context(
    query: &str,
    turns: &[Turn],
    working_set: &[String],
    enable_chunk_delete: bool,
) -> Vec<ChatMessage> {
    let mut messages = vec![
        ChatMessage::system(system_prompt(enable_chunk_delete)),
        ChatMessage::user(query.to_string()),
    ];
    for turn in turns {
        messages.push(ChatMessage::assistant(render_assistant(turn)));
        let rendered: Vec<String> =
            turn.tool_results.iter().map(|r| render_result(r, working_set)).collect();
        messages.push(ChatMessage::tool(rendered.join("\n\n")));
    }
    messages
}

/// Token footprint of a message list under the corpus tokenizer. Used for
/// the per-turn context sizes in the transcript.
pub(crate) fn measure(messages: &[ChatMessage], tokenizer: &TokenizerConfig) -> usize {
    messages
        .iter()
        .map(|m| count_tokens(&m.content, tokenizer).unwrap_or(0))
        .sum()
}

/// Cosine similarity between the original user query and a model-issued
/// search query, clamped to [0, 1]. Purely observational; a low score marks
/// a reformulation that wandered away from the question. Token-free text
/// scores 0.
pub fn drift_score(original: &str, reformulated: &str, embedder: &EmbedderConfig) -> f64 {
    let (Ok(a), Ok(b)) = (embed(original, embedder), embed(reformulated, embedder)) else {
        return 0.0;
    };
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    dot.clamp(0.0, 1.0)
}
