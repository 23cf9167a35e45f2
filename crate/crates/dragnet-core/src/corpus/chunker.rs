//! Boundary-aware document chunking.
//!
//! A body is split into units (sentences, paragraphs, or raw token runs),
//! units are packed into chunks up to a token target, and optional overlap
//! repeats the tail units of one chunk at the head of the next. Char spans
//! are Unicode scalar offsets into the body; together the spans cover the
//! body end to end.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use super::meta::{extract_metadata, Gazetteer};
use super::tokenizer::{count_tokens, TokenizerConfig};
use super::{Chunk, CorpusError, Document};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    #[default]
    Sentence,
    Paragraph,
    /// Cut at exact token offsets, ignoring sentence and paragraph structure.
    Hard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingConfig {
    pub boundary: BoundaryMode,
    pub target_tokens: usize,
    pub overlap_tokens: usize,
    #[serde(default = "default_expand_year_ranges")]
    pub expand_year_ranges: bool,
}

fn default_expand_year_ranges() -> bool {
    true
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            boundary: BoundaryMode::Sentence,
            target_tokens: 120,
            overlap_tokens: 0,
            expand_year_ranges: true,
        }
    }
}

impl ChunkingConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.target_tokens == 0 {
            return Err(CorpusError::ConfigInvalid(
                "target_tokens must be at least 1".into(),
            ));
        }
        if self.overlap_tokens >= self.target_tokens {
            return Err(CorpusError::ConfigInvalid(format!(
                "overlap_tokens ({}) must be smaller than target_tokens ({})",
                self.overlap_tokens, self.target_tokens
            )));
        }
        Ok(())
    }
}

pub fn chunk_id(doc_id: &str, ordinal: usize) -> String {
    format!("{doc_id}#{ordinal:04}")
}

/// Splits a document into chunks under the given config.
///
/// A chunk can exceed `target_tokens` only when a single unit already does,
/// or when carried overlap plus the next unit pushes past it. The stored
/// `token_count` is always recounted on the final chunk text.
pub fn chunk_document(
    doc: &Document,
    cfg: &ChunkingConfig,
    tokenizer: &TokenizerConfig,
    gaz: &Gazetteer,
) -> Result<Vec<Chunk>, CorpusError> {
    cfg.validate()?;
    tokenizer.validate()?;
    let body = doc.body.as_str();
    let spans = match cfg.boundary {
        BoundaryMode::Hard => hard_spans(body, cfg),
        mode => {
            let units = split_units(body, mode, tokenizer)?;
            pack_units(&units, cfg)
        }
    };

    let mut points = Vec::with_capacity(spans.len() * 2);
    for &(s, e) in &spans {
        points.push(s);
        points.push(e);
    }
    let char_at = char_positions(body, &points);

    let mut chunks = Vec::with_capacity(spans.len());
    for (ordinal, &(s, e)) in spans.iter().enumerate() {
        let text = body[s..e].to_string();
        let token_count = count_tokens(&text, tokenizer)?;
        let meta = extract_metadata(&text, gaz, cfg.expand_year_ranges);
        chunks.push(Chunk {
            chunk_id: chunk_id(&doc.doc_id, ordinal),
            doc_id: doc.doc_id.clone(),
            ordinal,
            text,
            token_count,
            char_span: (char_at[&s], char_at[&e]),
            meta,
        });
    }
    Ok(chunks)
}

struct Unit {
    byte_start: usize,
    byte_end: usize,
    tokens: usize,
}

fn sentence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"[.!?]+["'\u{201d}\u{2019})\]]*\s+"#).unwrap())
}

fn paragraph_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\n[ \t\r]*\n\s*").unwrap())
}

/// Byte spans of sentences, separator attached, tiling `body` exactly.
pub(crate) fn sentence_spans(body: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    for m in sentence_re().find_iter(body) {
        spans.push((start, m.end()));
        start = m.end();
    }
    if start < body.len() {
        spans.push((start, body.len()));
    }
    spans
}

fn split_units(
    body: &str,
    mode: BoundaryMode,
    tokenizer: &TokenizerConfig,
) -> Result<Vec<Unit>, CorpusError> {
    let re = match mode {
        BoundaryMode::Sentence => sentence_re(),
        BoundaryMode::Paragraph => paragraph_re(),
        BoundaryMode::Hard => unreachable!("hard mode does not use unit splitting"),
    };
    let mut units = Vec::new();
    let mut start = 0;
    for m in re.find_iter(body) {
        // the separator stays attached to the unit it closes, so units tile
        // the body exactly
        units.push(Unit { byte_start: start, byte_end: m.end(), tokens: 0 });
        start = m.end();
    }
    if start < body.len() {
        units.push(Unit { byte_start: start, byte_end: body.len(), tokens: 0 });
    }
    for u in &mut units {
        u.tokens = count_tokens(&body[u.byte_start..u.byte_end], tokenizer)?;
    }
    Ok(units)
}

fn pack_units(units: &[Unit], cfg: &ChunkingConfig) -> Vec<(usize, usize)> {
    let total: usize = units.iter().map(|u| u.tokens).sum();
    if units.is_empty() || total == 0 {
        return Vec::new();
    }

    // ranges of unit indices; consecutive ranges may overlap by the carried
    // suffix
    let mut ranges: Vec<(usize, usize)> = Vec::new();
    let mut a = 0usize;
    let mut cur_tokens = 0usize;
    for i in 0..units.len() {
        let u = &units[i];
        if i > a && cur_tokens > 0 && cur_tokens + u.tokens > cfg.target_tokens {
            ranges.push((a, i));
            a = overlap_start(units, a, i, cfg.overlap_tokens);
            cur_tokens = units[a..i].iter().map(|u| u.tokens).sum();
        }
        cur_tokens += u.tokens;
    }
    let tail_tokens: usize = units[a..].iter().map(|u| u.tokens).sum();
    if tail_tokens > 0 || ranges.is_empty() {
        ranges.push((a, units.len()));
    } else {
        // a token-free tail (trailing separators) merges into the last chunk
        let last = ranges.last_mut().unwrap();
        last.1 = units.len();
    }

    ranges
        .into_iter()
        .map(|(a, b)| (units[a].byte_start, units[b - 1].byte_end))
        .collect()
}

/// Smallest suffix of `units[a..b]` whose token sum reaches the overlap,
/// keeping at least the first unit out so chunk starts strictly advance.
fn overlap_start(units: &[Unit], a: usize, b: usize, overlap: usize) -> usize {
    if overlap == 0 {
        return b;
    }
    let mut start = b;
    let mut sum = 0usize;
    while start > a + 1 && sum < overlap {
        start -= 1;
        sum += units[start].tokens;
    }
    start
}

fn hard_spans(body: &str, cfg: &ChunkingConfig) -> Vec<(usize, usize)> {
    let word_starts: Vec<usize> = body.unicode_word_indices().map(|(i, _)| i).collect();
    let n = word_starts.len();
    if n == 0 {
        return Vec::new();
    }
    let target = cfg.target_tokens;
    let step = target - cfg.overlap_tokens;
    let mut spans = Vec::new();
    let mut s = 0usize;
    loop {
        let e = (s + target).min(n);
        let byte_start = if spans.is_empty() { 0 } else { word_starts[s] };
        let byte_end = if e == n { body.len() } else { word_starts[e] };
        spans.push((byte_start, byte_end));
        if e == n {
            break;
        }
        s += step;
    }
    spans
}

/// Maps the given byte offsets (all char boundaries) to char offsets.
fn char_positions(body: &str, bytes: &[usize]) -> BTreeMap<usize, usize> {
    let mut wanted: Vec<usize> = bytes.to_vec();
    wanted.sort_unstable();
    wanted.dedup();
    let mut out = BTreeMap::new();
    let mut chars = 0usize;
    let mut idx = 0usize;
    for (byte, _) in body.char_indices() {
        while idx < wanted.len() && wanted[idx] <= byte {
            out.insert(wanted[idx], chars);
            idx += 1;
        }
        chars += 1;
    }
    while idx < wanted.len() {
        out.insert(wanted[idx], chars);
        idx += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::slice_by_chars;
    use proptest::prelude::*;

    fn doc(body: &str) -> Document {
        Document {
            doc_id: "d".into(),
            title: "t".into(),
            body: body.into(),
            source: None,
        }
    }

    fn cfg(boundary: BoundaryMode, target: usize, overlap: usize) -> ChunkingConfig {
        ChunkingConfig {
            boundary,
            target_tokens: target,
            overlap_tokens: overlap,
            expand_year_ranges: true,
        }
    }

    fn tok() -> TokenizerConfig {
        TokenizerConfig::unicode_words()
    }

    /// `n` sentences of exactly `len` word tokens each.
    fn sentences(n: usize, len: usize) -> String {
        (0..n)
            .map(|s| {
                let words: Vec<String> = (0..len).map(|w| format!("s{s}w{w}")).collect();
                format!("{}.", words.join(" "))
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    #[test]
    fn sentences_pack_up_to_target() {
        let body = sentences(5, 40);
        let chunks =
            chunk_document(&doc(&body), &cfg(BoundaryMode::Sentence, 100, 0), &tok(), &Gazetteer::empty())
                .unwrap();
        let counts: Vec<usize> = chunks.iter().map(|c| c.token_count).collect();
        assert_eq!(counts, vec![80, 80, 40]);
    }

    #[test]
    fn overlap_carries_tail_sentence() {
        let body = sentences(5, 40);
        let chunks =
            chunk_document(&doc(&body), &cfg(BoundaryMode::Sentence, 100, 40), &tok(), &Gazetteer::empty())
                .unwrap();
        assert_eq!(chunks.len(), 4);
        // each chunk opens with the closing sentence of the previous one
        for (i, c) in chunks.iter().enumerate().skip(1) {
            assert!(c.text.starts_with(&format!("s{i}w0 ")));
            assert!(chunks[i - 1].text.contains(&format!("s{i}w0 ")));
            assert!(c.char_span.0 < chunks[i - 1].char_span.1);
        }
        let counts: Vec<usize> = chunks.iter().map(|c| c.token_count).collect();
        assert_eq!(counts, vec![80, 80, 80, 80]);
    }

    #[test]
    fn paragraphs_stay_whole_under_target() {
        let paras: Vec<String> = (0..4)
            .map(|p| {
                (0..80)
                    .map(|w| format!("p{p}w{w}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let body = paras.join("\n\n");
        let chunks =
            chunk_document(&doc(&body), &cfg(BoundaryMode::Paragraph, 100, 0), &tok(), &Gazetteer::empty())
                .unwrap();
        assert_eq!(chunks.len(), 4);
        assert!(chunks.iter().all(|c| c.token_count == 80));
    }

    #[test]
    fn hard_mode_splits_double_target_evenly() {
        let body = (0..240).map(|w| format!("w{w}")).collect::<Vec<_>>().join(" ");
        let chunks =
            chunk_document(&doc(&body), &cfg(BoundaryMode::Hard, 120, 0), &tok(), &Gazetteer::empty())
                .unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].token_count, 120);
        assert_eq!(chunks[1].token_count, 120);
        assert_eq!(chunks[0].char_span.1, chunks[1].char_span.0);
    }

    #[test]
    fn hard_mode_overlap_repeats_tokens() {
        let body = (0..26).map(|w| format!("w{w}")).collect::<Vec<_>>().join(" ");
        let chunks =
            chunk_document(&doc(&body), &cfg(BoundaryMode::Hard, 10, 2), &tok(), &Gazetteer::empty())
                .unwrap();
        assert_eq!(chunks.len(), 3);
        assert!(chunks.iter().all(|c| c.token_count == 10));
        assert!(chunks[1].text.starts_with("w8 "));
        assert!(chunks[2].text.starts_with("w16 "));
    }

    #[test]
    fn oversized_sentence_stays_one_chunk() {
        let body = sentences(1, 300);
        let chunks =
            chunk_document(&doc(&body), &cfg(BoundaryMode::Sentence, 100, 0), &tok(), &Gazetteer::empty())
                .unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].token_count, 300);
    }

    #[test]
    fn token_free_body_yields_no_chunks() {
        for body in ["", "   \n\n  ", "... !!! ???"] {
            let chunks = chunk_document(
                &doc(body),
                &cfg(BoundaryMode::Sentence, 50, 0),
                &tok(),
                &Gazetteer::empty(),
            )
            .unwrap();
            assert!(chunks.is_empty(), "body {body:?}");
        }
    }

    #[test]
    fn trailing_separators_merge_into_last_chunk() {
        let body = format!("{} ...", sentences(3, 40));
        let chunks =
            chunk_document(&doc(&body), &cfg(BoundaryMode::Sentence, 100, 0), &tok(), &Gazetteer::empty())
                .unwrap();
        let last = chunks.last().unwrap();
        assert_eq!(last.char_span.1, body.chars().count());
        assert!(last.token_count > 0);
    }

    #[test]
    fn overlap_must_be_below_target() {
        let err = chunk_document(
            &doc("a b c"),
            &cfg(BoundaryMode::Sentence, 10, 10),
            &tok(),
            &Gazetteer::empty(),
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::ConfigInvalid(_)));
    }

    #[test]
    fn spans_partition_body_without_overlap() {
        let body = format!(
            "{}\n\n{}",
            sentences(7, 13),
            sentences(4, 29)
        );
        let chunks =
            chunk_document(&doc(&body), &cfg(BoundaryMode::Sentence, 60, 0), &tok(), &Gazetteer::empty())
                .unwrap();
        assert_eq!(chunks[0].char_span.0, 0);
        assert_eq!(chunks.last().unwrap().char_span.1, body.chars().count());
        for w in chunks.windows(2) {
            assert_eq!(w[0].char_span.1, w[1].char_span.0);
        }
        for c in &chunks {
            assert_eq!(c.text, slice_by_chars(&body, c.char_span));
        }
    }

    proptest! {
        #[test]
        fn packing_invariants_hold(
            lens in proptest::collection::vec(1usize..40, 1..30),
            target in 40usize..120,
            overlap_frac in 0usize..3,
        ) {
            let overlap = match overlap_frac {
                0 => 0,
                1 => target / 4,
                _ => target / 2,
            };
            let body = lens
                .iter()
                .enumerate()
                .map(|(s, &len)| {
                    let words: Vec<String> =
                        (0..len).map(|w| format!("s{s}w{w}")).collect();
                    format!("{}.", words.join(" "))
                })
                .collect::<Vec<_>>()
                .join(" ");
            let cfg = cfg(BoundaryMode::Sentence, target, overlap);
            let chunks =
                chunk_document(&doc(&body), &cfg, &tok(), &Gazetteer::empty()).unwrap();

            prop_assert!(!chunks.is_empty());
            prop_assert_eq!(chunks[0].char_span.0, 0);
            prop_assert_eq!(
                chunks.last().unwrap().char_span.1,
                body.chars().count()
            );
            let max_unit = *lens.iter().max().unwrap();
            for (i, c) in chunks.iter().enumerate() {
                prop_assert_eq!(c.ordinal, i);
                prop_assert_eq!(&c.text, slice_by_chars(&body, c.char_span));
                prop_assert_eq!(
                    c.token_count,
                    count_tokens(&c.text, &tok()).unwrap()
                );
                prop_assert!(c.token_count > 0);
                // a chunk passes target only by one oversized unit or by
                // carried overlap plus one unit
                prop_assert!(
                    c.token_count <= target.max(max_unit) + overlap + max_unit
                );
            }
            for w in chunks.windows(2) {
                if overlap == 0 {
                    prop_assert_eq!(w[0].char_span.1, w[1].char_span.0);
                } else {
                    prop_assert!(w[1].char_span.0 <= w[0].char_span.1);
                    prop_assert!(w[1].char_span.0 > w[0].char_span.0);
                }
            }
        }
    }
}
