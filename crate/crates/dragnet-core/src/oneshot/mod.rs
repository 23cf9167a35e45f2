//! Single-pass pipeline: retrieve, pack a token budget, optionally filter
//! and crop, then answer in one generation call.
//!
//! The packing stage treats chunk selection as a 0/1 knapsack over relevance
//! and token cost. The shipped selector is greedy by relevance density with
//! a best-single-item guard; the exact solver lives alongside it as a test
//! oracle only.

mod crop;
mod filter;
mod select;

pub use crop::{chunk_crop, crop_chunks, CropResult};
pub use filter::{chunk_filter, extract_query_meta};
pub use select::{knapsack_exact, select_token_constrained};

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ChunkMeta, CorpusStore, Gazetteer};
use crate::index::{Index, IndexError, ScoredChunk};
use crate::llm::{ChatBackend, ChatMessage, LlmError};
use crate::corpus::Chunk;

const ONESHOT_PROMPT: &str = include_str!("../../assets/oneshot_prompt.txt");
const ANSWER_SYSTEM: &str =
    "You answer questions from retrieved context. Be precise and brief.";

/// Backend calls for distinct chunk crops run under this in-flight cap.
const CROP_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Error)]
pub enum OneshotError {
    #[error("selection instance too large for the exact solver: {0}")]
    InstanceTooLarge(String),
    #[error("invalid budget: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// One scored chunk as the selector sees it.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub chunk: Chunk,
    pub relevance: f64,
    pub tokens: usize,
}

impl Candidate {
    pub fn from_scored(scored: &ScoredChunk) -> Self {
        Self {
            chunk: scored.chunk.clone(),
            relevance: scored.score,
            tokens: scored.chunk.token_count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub max_tokens: usize,
    pub reserve_tokens: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Self { max_tokens: 32_000, reserve_tokens: 1_500 }
    }
}

impl Budget {
    pub fn new(max_tokens: usize, reserve_tokens: usize) -> Self {
        Self { max_tokens, reserve_tokens }
    }

    pub fn validate(&self) -> Result<(), OneshotError> {
        if self.max_tokens == 0 {
            return Err(OneshotError::ConfigInvalid("max_tokens must be positive".into()));
        }
        if self.reserve_tokens >= self.max_tokens {
            return Err(OneshotError::ConfigInvalid(
                "reserve_tokens must be smaller than max_tokens".into(),
            ));
        }
        Ok(())
    }

    /// Tokens actually available to evidence chunks.
    pub fn available(&self) -> usize {
        self.max_tokens.saturating_sub(self.reserve_tokens)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Selection {
    pub chosen: Vec<Candidate>,
    pub total_relevance: f64,
    pub total_tokens: usize,
    pub warnings: Vec<String>,
}

impl Selection {
    pub(crate) fn from_chosen(chosen: Vec<Candidate>) -> Self {
        let total_relevance = chosen.iter().map(|c| c.relevance).sum();
        let total_tokens = chosen.iter().map(|c| c.tokens).sum();
        Self { chosen, total_relevance, total_tokens, warnings: Vec::new() }
    }

    pub fn chunk_ids(&self) -> Vec<String> {
        self.chosen.iter().map(|c| c.chunk.chunk_id.clone()).collect()
    }

    pub fn contains(&self, chunk_id: &str) -> bool {
        self.chosen.iter().any(|c| c.chunk.chunk_id == chunk_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterRules {
    pub require_year_alignment: bool,
    pub require_location_alignment: bool,
    pub entity_overlap_min: usize,
    pub add_neighbor_chunks: bool,
    pub add_same_doc_matching_meta: bool,
}

impl Default for FilterRules {
    fn default() -> Self {
        Self {
            require_year_alignment: true,
            require_location_alignment: true,
            entity_overlap_min: 0,
            add_neighbor_chunks: true,
            add_same_doc_matching_meta: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stages {
    pub filter: bool,
    pub crop: bool,
}

impl Stages {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        Self { filter: true, crop: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSnapshot {
    pub chunk_ids: Vec<String>,
    pub tokens: usize,
}

impl StageSnapshot {
    fn of(sel: &Selection) -> Self {
        Self { chunk_ids: sel.chunk_ids(), tokens: sel.total_tokens }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTrace {
    pub retrieved: StageSnapshot,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after_filter: Option<StageSnapshot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after_crop: Option<StageSnapshot>,
    #[serde(rename = "final")]
    pub final_stage: StageSnapshot,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenChunk {
    pub chunk_id: String,
    pub relevance: f64,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneshotRecord {
    pub query: String,
    pub stage_trace: StageTrace,
    pub chosen: Vec<ChosenChunk>,
    pub answer: String,
    pub timing_ms: u64,
}

/// Retrieval, budgeted selection, optional refinement stages, one answer.
#[allow(clippy::too_many_arguments)]
pub fn run_oneshot(
    query: &str,
    index: &Index,
    corpus: &CorpusStore,
    gazetteer: &Gazetteer,
    budget: &Budget,
    rules: &FilterRules,
    stages: &Stages,
    backend: &dyn ChatBackend,
) -> Result<OneshotRecord, OneshotError> {
    budget.validate()?;
    let started = Instant::now();

    let ranking = index.search_all(query)?;
    let candidates: Vec<Candidate> = ranking.iter().map(Candidate::from_scored).collect();

    let mut sel = select_token_constrained(&candidates, budget);
    let retrieved = StageSnapshot::of(&sel);
    let mut warnings = std::mem::take(&mut sel.warnings);

    let mut after_filter = None;
    if stages.filter {
        let query_meta = extract_query_meta(query, gazetteer);
        sel = chunk_filter(&sel, &query_meta, &ranking, corpus, rules, budget);
        warnings.append(&mut sel.warnings);
        after_filter = Some(StageSnapshot::of(&sel));
    }

    let mut after_crop = None;
    if stages.crop {
        let chunks: Vec<&Chunk> = sel.chosen.iter().map(|c| &c.chunk).collect();
        let crops = crop_chunks(
            &chunks,
            query,
            backend,
            corpus.tokenizer(),
            CROP_MAX_IN_FLIGHT,
        );
        let mut cropped = Vec::with_capacity(sel.chosen.len());
        for (cand, (crop, warning)) in sel.chosen.iter().zip(crops) {
            if let Some(w) = warning {
                warnings.push(w);
            }
            let mut chunk = cand.chunk.clone();
            chunk.text = crop.kept_text;
            chunk.token_count = crop.kept_tokens;
            cropped.push(Candidate { tokens: chunk.token_count, chunk, relevance: cand.relevance });
        }
        // cropping only shrinks, so this re-pack is a budget safety pass,
        // not a chance to admit new chunks
        sel = select_token_constrained(&cropped, budget);
        warnings.append(&mut sel.warnings);
        after_crop = Some(StageSnapshot::of(&sel));
    }

    let final_stage = StageSnapshot::of(&sel);
    if sel.chosen.is_empty() {
        warnings.push("empty final selection; answering without evidence".into());
    }

    let mut ordered = sel.chosen;
    ordered.sort_by(|a, b| a.chunk.chunk_id.cmp(&b.chunk.chunk_id));
    let evidence: Vec<(String, String)> = ordered
        .iter()
        .map(|c| (c.chunk.chunk_id.clone(), c.chunk.text.clone()))
        .collect();
    let answer = answer_from_chunks(query, evidence, backend)?;

    Ok(OneshotRecord {
        query: query.to_string(),
        stage_trace: StageTrace {
            retrieved,
            after_filter,
            after_crop,
            final_stage,
            warnings,
        },
        chosen: ordered
            .iter()
            .map(|c| ChosenChunk {
                chunk_id: c.chunk.chunk_id.clone(),
                relevance: c.relevance,
                tokens: c.tokens,
            })
            .collect(),
        answer,
        timing_ms: started.elapsed().as_millis() as u64,
    })
}

/// Renders evidence as numbered context and asks the backend; the prompt is
/// the same whether the evidence came from a budgeted pass or a plain
/// top-k, so pipelines differ only in what they retrieved.
pub fn answer_from_chunks(
    query: &str,
    mut evidence: Vec<(String, String)>,
    backend: &dyn ChatBackend,
) -> Result<String, LlmError> {
    evidence.sort_by(|a, b| a.0.cmp(&b.0));
    let context = if evidence.is_empty() {
        "(no context retrieved)".to_string()
    } else {
        evidence
            .iter()
            .map(|(id, text)| format!("[{id}] {}", text.trim_end()))
            .collect::<Vec<_>>()
            .join("\n\n")
    };
    let prompt = ONESHOT_PROMPT.replace("{query}", query).replace("{context}", &context);
    Ok(backend
        .chat(&[ChatMessage::system(ANSWER_SYSTEM), ChatMessage::user(prompt)])?
        .content)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageRatio {
    pub chunks: f64,
    pub tokens: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetentionRatios {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter: Option<StageRatio>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crop: Option<StageRatio>,
    pub final_stage: StageRatio,
}

/// Fraction of the initially packed chunks (and their tokens) surviving
/// each stage. An empty initial pack counts as fully retained.
pub fn retention_ratio(trace: &StageTrace) -> RetentionRatios {
    let base_chunks = trace.retrieved.chunk_ids.len();
    let base_tokens = trace.retrieved.tokens;
    let ratio = |snap: &StageSnapshot| StageRatio {
        chunks: if base_chunks == 0 {
            1.0
        } else {
            snap.chunk_ids.len() as f64 / base_chunks as f64
        },
        tokens: if base_tokens == 0 {
            1.0
        } else {
            snap.tokens as f64 / base_tokens as f64
        },
    };
    RetentionRatios {
        filter: trace.after_filter.as_ref().map(&ratio),
        crop: trace.after_crop.as_ref().map(&ratio),
        final_stage: ratio(&trace.final_stage),
    }
}

/// The drop rule: true when the chunk disagrees with the query on a
/// dimension both sides have populated. Empty metadata never drops.
pub(crate) fn meta_mismatch(
    chunk_meta: &ChunkMeta,
    query_meta: &ChunkMeta,
    rules: &FilterRules,
) -> bool {
    if rules.require_year_alignment
        && !query_meta.years.is_empty()
        && !chunk_meta.years.is_empty()
        && chunk_meta.years.intersection(&query_meta.years).next().is_none()
    {
        return true;
    }
    if rules.require_location_alignment
        && !query_meta.locations.is_empty()
        && !chunk_meta.locations.is_empty()
        && chunk_meta
            .locations
            .intersection(&query_meta.locations)
            .next()
            .is_none()
    {
        return true;
    }
    if rules.entity_overlap_min > 0
        && !query_meta.entities.is_empty()
        && !chunk_meta.entities.is_empty()
        && chunk_meta.entities.intersection(&query_meta.entities).count()
            < rules.entity_overlap_min
    {
        return true;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{build_index, EmbedderConfig, IndexConfig};
    use crate::llm::{ScriptRule, ScriptedBackend};
    use crate::testkit::corpus_fixtures;

    fn fixture() -> (CorpusStore, Index) {
        let corpus = corpus_fixtures::benchmark_corpus();
        let index =
            build_index(&corpus, &EmbedderConfig::default(), &IndexConfig::default()).unwrap();
        (corpus, index)
    }

    fn answer_backend(reply: &str) -> ScriptedBackend {
        ScriptedBackend::from_rules(vec![ScriptRule::fallback(reply)]).unwrap()
    }

    /// Crop requests keep only the first sentence; everything else gets the
    /// canned answer.
    fn cropping_backend(answer: &str) -> ScriptedBackend {
        ScriptedBackend::from_rules(vec![
            ScriptRule::on_contains("Sentences, numbered from 0:", r#"{"keep": [0]}"#),
            ScriptRule::fallback(answer),
        ])
        .unwrap()
    }

    #[test]
    fn stages_off_is_plain_ranked_retrieval() {
        let (corpus, index) = fixture();
        let query = "survey code zq03p05x for the t03field ledger";
        let budget = Budget::new(480, 80);
        let backend = answer_backend("the code is zq03p05x.");
        let record = run_oneshot(
            query,
            &index,
            &corpus,
            &Gazetteer::builtin(),
            &budget,
            &FilterRules::default(),
            &Stages::none(),
            &backend,
        )
        .unwrap();

        let top5: Vec<String> = index
            .search_all(query)
            .unwrap()
            .into_iter()
            .take(5)
            .map(|s| s.chunk_id)
            .collect();
        assert_eq!(record.stage_trace.retrieved.chunk_ids, top5);
        assert!(record.stage_trace.after_filter.is_none());
        assert!(record.stage_trace.after_crop.is_none());
        assert_eq!(record.stage_trace.final_stage, record.stage_trace.retrieved);
        assert_eq!(record.stage_trace.retrieved.tokens, 400);
        assert_eq!(record.answer, "the code is zq03p05x.");

        let mut sorted = top5;
        sorted.sort();
        let listed: Vec<String> =
            record.chosen.iter().map(|c| c.chunk_id.clone()).collect();
        assert_eq!(listed, sorted, "context lists chunks in id order");
    }

    #[test]
    fn pipeline_is_deterministic_for_a_fixed_script() {
        let (corpus, index) = fixture();
        let (query, _) = corpus_fixtures::filter_probe(17);
        let budget = Budget::new(480, 80);
        let run = || {
            run_oneshot(
                &query,
                &index,
                &corpus,
                &Gazetteer::builtin(),
                &budget,
                &FilterRules::default(),
                &Stages::all(),
                &cropping_backend("the filings span four years."),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.stage_trace, b.stage_trace);
        assert_eq!(a.chosen, b.chosen);
        assert_eq!(a.answer, b.answer);
    }

    #[test]
    fn budget_below_every_chunk_still_answers_and_is_flagged() {
        let (corpus, index) = fixture();
        let budget = Budget::new(11, 1);
        let backend = answer_backend("nothing to cite.");
        let record = run_oneshot(
            "t05meta survey office",
            &index,
            &corpus,
            &Gazetteer::builtin(),
            &budget,
            &FilterRules::default(),
            &Stages::none(),
            &backend,
        )
        .unwrap();
        assert!(record.stage_trace.final_stage.chunk_ids.is_empty());
        assert!(record.chosen.is_empty());
        assert_eq!(record.answer, "nothing to cite.");
        let warnings = record.stage_trace.warnings.join("; ");
        assert!(warnings.contains("smaller than every candidate"), "{warnings}");
        assert!(warnings.contains("empty final selection"), "{warnings}");
    }

    #[test]
    fn invalid_budget_is_rejected_up_front() {
        let (corpus, index) = fixture();
        let backend = answer_backend("unused");
        let err = run_oneshot(
            "anything",
            &index,
            &corpus,
            &Gazetteer::builtin(),
            &Budget::new(100, 100),
            &FilterRules::default(),
            &Stages::none(),
            &backend,
        )
        .unwrap_err();
        assert!(matches!(err, OneshotError::ConfigInvalid(_)));
    }

    #[test]
    fn retention_is_full_when_no_stage_runs() {
        let (corpus, index) = fixture();
        let backend = answer_backend("done.");
        let record = run_oneshot(
            "t09core program cycle",
            &index,
            &corpus,
            &Gazetteer::builtin(),
            &Budget::new(480, 80),
            &FilterRules::default(),
            &Stages::none(),
            &backend,
        )
        .unwrap();
        let ratios = retention_ratio(&record.stage_trace);
        assert!(ratios.filter.is_none());
        assert!(ratios.crop.is_none());
        assert_eq!(ratios.final_stage.chunks, 1.0);
        assert_eq!(ratios.final_stage.tokens, 1.0);
    }

    #[test]
    fn retention_ratios_follow_the_trace_arithmetic() {
        let snap = |ids: &[&str], tokens: usize| StageSnapshot {
            chunk_ids: ids.iter().map(|s| s.to_string()).collect(),
            tokens,
        };
        let trace = StageTrace {
            retrieved: snap(&["a", "b", "c", "d", "e"], 400),
            after_filter: Some(snap(&["a", "b", "c", "d"], 320)),
            after_crop: Some(snap(&["a", "b", "c", "d"], 240)),
            final_stage: snap(&["a", "b", "c", "d"], 240),
            warnings: Vec::new(),
        };
        let ratios = retention_ratio(&trace);
        let filter = ratios.filter.unwrap();
        assert_eq!(filter.chunks, 0.8);
        assert_eq!(filter.tokens, 0.8);
        let crop = ratios.crop.unwrap();
        assert_eq!(crop.chunks, 0.8);
        assert_eq!(crop.tokens, 0.6);
        assert_eq!(ratios.final_stage.tokens, 0.6);
    }

    #[test]
    fn empty_retrieval_base_counts_as_fully_retained() {
        let empty = StageSnapshot { chunk_ids: Vec::new(), tokens: 0 };
        let trace = StageTrace {
            retrieved: empty.clone(),
            after_filter: Some(empty.clone()),
            after_crop: None,
            final_stage: empty,
            warnings: Vec::new(),
        };
        let ratios = retention_ratio(&trace);
        assert_eq!(ratios.filter.unwrap().chunks, 1.0);
        assert_eq!(ratios.final_stage.tokens, 1.0);
    }

    #[test]
    fn cropping_after_filtering_never_retains_more_than_filtering_alone() {
        let (corpus, index) = fixture();
        let (query, _) = corpus_fixtures::filter_probe(16);
        let budget = Budget::new(480, 80);
        let filter_only = run_oneshot(
            &query,
            &index,
            &corpus,
            &Gazetteer::builtin(),
            &budget,
            &FilterRules::default(),
            &Stages { filter: true, crop: false },
            &answer_backend("filtered."),
        )
        .unwrap();
        let combined = run_oneshot(
            &query,
            &index,
            &corpus,
            &Gazetteer::builtin(),
            &budget,
            &FilterRules::default(),
            &Stages::all(),
            &cropping_backend("filtered and cropped."),
        )
        .unwrap();

        // same index, query, and budget: the shared stages agree
        assert_eq!(
            filter_only.stage_trace.retrieved,
            combined.stage_trace.retrieved
        );
        assert_eq!(
            filter_only.stage_trace.after_filter,
            combined.stage_trace.after_filter
        );

        let alone = retention_ratio(&filter_only.stage_trace);
        let both = retention_ratio(&combined.stage_trace);
        assert!(
            both.final_stage.tokens <= alone.final_stage.tokens,
            "combined {} vs filter-only {}",
            both.final_stage.tokens,
            alone.final_stage.tokens
        );
        // first-sentence cropping strictly shrinks these fixture paragraphs
        assert!(
            combined.stage_trace.after_crop.as_ref().unwrap().tokens
                < combined.stage_trace.after_filter.as_ref().unwrap().tokens
        );

        for snap in [
            &combined.stage_trace.retrieved,
            combined.stage_trace.after_filter.as_ref().unwrap(),
            combined.stage_trace.after_crop.as_ref().unwrap(),
            &combined.stage_trace.final_stage,
        ] {
            assert!(snap.tokens <= budget.available(), "stage over budget");
        }
    }
}
