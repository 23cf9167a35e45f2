//! Assistant-message grammar.
//!
//! A reply carries an optional <think> block, zero or more <tool_call>
//! blocks holding one JSON object each, and free text. Any tool_call block,
//! valid or not, makes the reply an action message; only a reply with no
//! blocks at all is a final answer. The parser never fails: broken blocks
//! become error entries that the loop reports back to the model.

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// One validated tool invocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", content = "arguments", rename_all = "snake_case")]
pub enum ToolCall {
    ChunkSearch { query: String },
    ChunkDelete { chunk_ids: Vec<String> },
}

impl ToolCall {
    pub fn name(&self) -> &'static str {
        match self {
            ToolCall::ChunkSearch { .. } => "chunk_search",
            ToolCall::ChunkDelete { .. } => "chunk_delete",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedMessage {
    pub think_text: String,
    pub tool_calls: Vec<ToolCall>,
    /// One entry per tool_call block that could not be turned into a call.
    pub errors: Vec<String>,
    /// Present only when the reply held no tool_call blocks.
    pub final_answer: Option<String>,
}

impl ParsedMessage {
    pub fn is_action(&self) -> bool {
        self.final_answer.is_none()
    }
}

#[derive(Deserialize)]
struct RawCall {
    name: String,
    #[serde(default)]
    arguments: Value,
}

/// Extracts `<tag>...</tag>` spans. An opening tag without its closer runs
/// to the end of the text and is consumed, so garbage cannot leak into the
/// final answer.
fn tag_spans(text: &str, tag: &str) -> Vec<(usize, usize, usize, usize)> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut spans = Vec::new();
    let mut from = 0;
    while let Some(rel) = text[from..].find(&open) {
        let start = from + rel;
        let inner_start = start + open.len();
        match text[inner_start..].find(&close) {
            Some(rel_close) => {
                let inner_end = inner_start + rel_close;
                spans.push((start, inner_start, inner_end, inner_end + close.len()));
                from = inner_end + close.len();
            }
            None => {
                spans.push((start, inner_start, text.len(), text.len()));
                break;
            }
        }
    }
    spans
}

fn validate_call(raw: RawCall) -> Result<ToolCall, String> {
    match raw.name.as_str() {
        "chunk_search" => {
            let query = raw
                .arguments
                .get("query")
                .and_then(Value::as_str)
                .ok_or("chunk_search arguments need a string `query`")?;
            if query.trim().is_empty() {
                return Err("chunk_search query is empty".into());
            }
            Ok(ToolCall::ChunkSearch { query: query.to_string() })
        }
        "chunk_delete" => {
            let ids = raw
                .arguments
                .get("chunk_ids")
                .and_then(Value::as_array)
                .ok_or("chunk_delete arguments need a `chunk_ids` array")?;
            let chunk_ids: Option<Vec<String>> =
                ids.iter().map(|v| v.as_str().map(str::to_string)).collect();
            let chunk_ids =
                chunk_ids.ok_or("chunk_delete chunk_ids must all be strings")?;
            if chunk_ids.is_empty() {
                return Err("chunk_delete chunk_ids is empty".into());
            }
            Ok(ToolCall::ChunkDelete { chunk_ids })
        }
        other => Err(format!("unknown tool `{other}`")),
    }
}

fn strip_spans(text: &str, spans: &[(usize, usize, usize, usize)]) -> String {
    let mut covered: Vec<(usize, usize)> = spans.iter().map(|&(s, _, _, e)| (s, e)).collect();
    covered.sort_unstable();
    let mut out = String::new();
    let mut at = 0;
    for (s, e) in covered {
        if s > at {
            out.push_str(&text[at..s]);
        }
        at = at.max(e);
    }
    if at < text.len() {
        out.push_str(&text[at..]);
    }
    out.trim().to_string()
}

/// Reply text with every think and tool_call block removed. The forced
/// answer falls back to this when the model keeps calling tools.
pub(crate) fn text_outside_blocks(text: &str) -> String {
    let mut spans = tag_spans(text, "think");
    spans.extend(tag_spans(text, "tool_call"));
    strip_spans(text, &spans)
}

/// Splits an assistant reply into thought, tool calls, and answer text.
/// Total over arbitrary input.
pub fn parse_assistant_message(text: &str) -> ParsedMessage {
    let think_spans = tag_spans(text, "think");
    let call_spans = tag_spans(text, "tool_call");

    // a tool_call inside a think block is commentary, not an instruction
    let outside_think = |start: usize| {
        !think_spans.iter().any(|&(s, _, _, e)| start >= s && start < e)
    };
    let call_spans: Vec<_> =
        call_spans.into_iter().filter(|&(s, _, _, _)| outside_think(s)).collect();

    let think_text = think_spans
        .iter()
        .map(|&(_, a, b, _)| text[a..b].trim())
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join("\n");

    let mut tool_calls = Vec::new();
    let mut errors = Vec::new();
    for &(_, a, b, _) in &call_spans {
        let body = text[a..b].trim();
        match serde_json::from_str::<RawCall>(body) {
            Ok(raw) => match validate_call(raw) {
                Ok(call) => tool_calls.push(call),
                Err(e) => errors.push(e),
            },
            Err(e) => errors.push(format!("tool_call is not a JSON call object: {e}")),
        }
    }

    let final_answer =
        if call_spans.is_empty() { Some(strip_spans(text, &think_spans)) } else { None };

    ParsedMessage { think_text, tool_calls, errors, final_answer }
}
