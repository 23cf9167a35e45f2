//! Sentence-level chunk cropping.
//!
//! The backend never writes context text. It is shown the chunk's numbered
//! sentences and asked which numbers to keep; the kept text is rebuilt from
//! the original spans, so every byte in the crop is a byte of the original
//! chunk. Anything that goes wrong keeps the whole chunk instead.

use serde::{Deserialize, Serialize};

use crate::corpus::{count_tokens, sentence_spans, Chunk, TokenizerConfig};
use crate::llm::{ChatBackend, ChatMessage};

const CROP_PROMPT: &str = include_str!("../../assets/crop_prompt.txt");
const CROP_SYSTEM: &str = "You shorten retrieved text without rewriting it.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropResult {
    pub chunk_id: String,
    pub kept_text: String,
    pub kept_tokens: usize,
    pub original_tokens: usize,
}

impl CropResult {
    fn whole(chunk: &Chunk) -> Self {
        Self {
            chunk_id: chunk.chunk_id.clone(),
            kept_text: chunk.text.clone(),
            kept_tokens: chunk.token_count,
            original_tokens: chunk.token_count,
        }
    }
}

/// Crops one chunk. The second value is a warning when the crop fell back
/// to keeping everything for reasons other than the model asking for that.
pub fn chunk_crop(
    chunk: &Chunk,
    query: &str,
    backend: &dyn ChatBackend,
    tokenizer: &TokenizerConfig,
) -> (CropResult, Option<String>) {
    let spans = sentence_spans(&chunk.text);
    if spans.len() <= 1 {
        return (CropResult::whole(chunk), None);
    }
    let listing = spans
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| format!("{i}: {}", chunk.text[a..b].trim_end()))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = CROP_PROMPT.replace("{query}", query).replace("{sentences}", &listing);

    let reply = match backend.chat(&[ChatMessage::system(CROP_SYSTEM), ChatMessage::user(prompt)])
    {
        Ok(m) => m.content,
        Err(e) => {
            return (
                CropResult::whole(chunk),
                Some(format!("crop of {} kept whole chunk: {e}", chunk.chunk_id)),
            );
        }
    };

    let Some(keep) = parse_keep(&reply, spans.len()) else {
        return (
            CropResult::whole(chunk),
            Some(format!(
                "crop of {} kept whole chunk: malformed keep list {:?}",
                chunk.chunk_id,
                reply.chars().take(60).collect::<String>()
            )),
        );
    };
    if keep.len() == spans.len() {
        return (CropResult::whole(chunk), None);
    }

    let kept_text = apply_keep(&chunk.text, &spans, &keep);
    let kept_tokens = match count_tokens(&kept_text, tokenizer) {
        Ok(n) if n > 0 => n,
        Ok(_) => {
            return (
                CropResult::whole(chunk),
                Some(format!(
                    "crop of {} kept whole chunk: kept sentences hold no tokens",
                    chunk.chunk_id
                )),
            );
        }
        Err(e) => {
            return (
                CropResult::whole(chunk),
                Some(format!("crop of {} kept whole chunk: {e}", chunk.chunk_id)),
            );
        }
    };
    (
        CropResult {
            chunk_id: chunk.chunk_id.clone(),
            kept_text,
            kept_tokens,
            original_tokens: chunk.token_count,
        },
        None,
    )
}

/// Crops many chunks, at most `max_in_flight` backend calls at a time.
/// Results keep the input order.
pub fn crop_chunks(
    chunks: &[&Chunk],
    query: &str,
    backend: &dyn ChatBackend,
    tokenizer: &TokenizerConfig,
    max_in_flight: usize,
) -> Vec<(CropResult, Option<String>)> {
    let sem = crate::llm::Semaphore::new(max_in_flight.max(1));
    let mut out: Vec<Option<(CropResult, Option<String>)>> = vec![None; chunks.len()];
    std::thread::scope(|scope| {
        let sem = &sem;
        let slots: Vec<_> = out.iter_mut().collect();
        for (chunk, slot) in chunks.iter().zip(slots) {
            scope.spawn(move || {
                let _permit = sem.acquire();
                *slot = Some(chunk_crop(chunk, query, backend, tokenizer));
            });
        }
    });
    out.into_iter().map(|r| r.expect("every crop thread ran")).collect()
}

#[derive(Deserialize)]
struct KeepReply {
    keep: Vec<usize>,
}

/// Extracts a valid, sorted, deduplicated keep list from the reply, or
/// nothing if the reply is unusable. An empty list is unusable by policy:
/// a crop that deletes everything is treated as a model mistake.
fn parse_keep(reply: &str, sentence_count: usize) -> Option<Vec<usize>> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    if end < start {
        return None;
    }
    let parsed: KeepReply = serde_json::from_str(&reply[start..=end]).ok()?;
    let mut keep: Vec<usize> =
        parsed.keep.into_iter().filter(|&i| i < sentence_count).collect();
    keep.sort_unstable();
    keep.dedup();
    if keep.is_empty() {
        None
    } else {
        Some(keep)
    }
}

/// Concatenates the chosen sentence spans in original order.
pub(crate) fn apply_keep(text: &str, spans: &[(usize, usize)], keep: &[usize]) -> String {
    let mut kept = String::new();
    for &i in keep {
        let (a, b) = spans[i];
        kept.push_str(&text[a..b]);
    }
    kept
}

/// True when `kept` is a concatenation of substrings of `original` that
/// appear in order. Used by tests to pin the verbatim guarantee.
#[cfg(test)]
pub(crate) fn is_ordered_substring_concat(original: &str, kept: &str) -> bool {
    let mut cursor = 0usize;
    let mut remaining = kept;
    while !remaining.is_empty() {
        let window = &original[cursor..];
        // longest prefix of `remaining` that occurs in the rest of the
        // original; greedy longest is enough because spans never overlap
        let mut matched = 0;
        for (pos, _) in window.match_indices(remaining.chars().next().unwrap()) {
            let avail = &window[pos..];
            let len = avail
                .char_indices()
                .map(|(i, _)| i)
                .chain(std::iter::once(avail.len()))
                .take_while(|&i| i <= remaining.len())
                .filter(|&i| remaining.is_char_boundary(i) && avail[..i] == remaining[..i])
                .last()
                .unwrap_or(0);
            if len > matched {
                matched = len;
                cursor += pos + len;
            }
            if len > 0 {
                break;
            }
        }
        if matched == 0 {
            return false;
        }
        remaining = &remaining[matched..];
    }
    true
}
