//! Tool execution against the working set.
//!
//! chunk_search queries the index and appends new ids to the working set;
//! on the first search of a transcript it can merge in a fallback retrieval
//! run on the original user query. chunk_delete edits the working set only;
//! the index is untouched, so a deleted chunk can come back through a later
//! search.

use serde::{Deserialize, Serialize};

use crate::corpus::ChunkMeta;
use crate::index::{Index, ScoredChunk};
use crate::oneshot::{select_token_constrained, Candidate};

use super::{AgentConfig, FallbackRetriever};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub chunk_id: String,
    pub score: f64,
    pub meta: ChunkMeta,
    pub text: String,
}

impl SearchHit {
    pub(crate) fn from_scored(s: &ScoredChunk) -> Self {
        Self {
            chunk_id: s.chunk_id.clone(),
            score: s.score,
            meta: s.chunk.meta.clone(),
            text: s.chunk.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToolResult {
    Search { hits: Vec<SearchHit> },
    Delete { deleted: Vec<String>, unknown: Vec<String> },
    Error { message: String },
}

/// Ordered working set plus the per-transcript counters the loop reports.
#[derive(Debug, Default)]
pub(crate) struct AgentState {
    pub working_set: Vec<String>,
    pub search_count: usize,
    pub fallback_executed: bool,
}

impl AgentState {
    fn admit(&mut self, id: &str) {
        if !self.working_set.iter().any(|w| w == id) {
            self.working_set.push(id.to_string());
        }
    }
}

fn fallback_hits(
    index: &Index,
    original_query: &str,
    cfg: &AgentConfig,
) -> Result<Vec<SearchHit>, String> {
    match cfg.fallback_retriever {
        FallbackRetriever::TopK => index
            .search(original_query, cfg.k_per_search)
            .map(|hits| hits.iter().map(SearchHit::from_scored).collect())
            .map_err(|e| format!("fallback search failed: {e}")),
        FallbackRetriever::TokenConstrained => {
            let budget = cfg.fallback_budget.as_ref().expect("validated config");
            let ranking = index
                .search_all(original_query)
                .map_err(|e| format!("fallback search failed: {e}"))?;
            let candidates: Vec<Candidate> =
                ranking.iter().map(Candidate::from_scored).collect();
            let sel = select_token_constrained(&candidates, budget);
            Ok(sel
                .chosen
                .iter()
                .map(|c| SearchHit {
                    chunk_id: c.chunk.chunk_id.clone(),
                    score: c.relevance,
                    meta: c.chunk.meta.clone(),
                    text: c.chunk.text.clone(),
                })
                .collect())
        }
    }
}

/// Runs one chunk_search. The first search of a transcript may merge in the
/// fallback retrieval on the original query: entries are deduplicated by
/// chunk id (the model-query hit wins), ordered by score with model-query
/// hits first at equal score.
pub(crate) fn exec_chunk_search(
    state: &mut AgentState,
    index: &Index,
    original_query: &str,
    model_query: &str,
    cfg: &AgentConfig,
) -> ToolResult {
    let first_search = state.search_count == 0;
    state.search_count += 1;

    let model_hits = match index.search(model_query, cfg.k_per_search) {
        Ok(hits) => hits,
        Err(e) => return ToolResult::Error { message: format!("chunk_search failed: {e}") },
    };
    let mut merged: Vec<(SearchHit, u8)> =
        model_hits.iter().map(|s| (SearchHit::from_scored(s), 0u8)).collect();

    if first_search && cfg.fallback_on_first_search {
        state.fallback_executed = true;
        match fallback_hits(index, original_query, cfg) {
            Ok(extra) => {
                for hit in extra {
                    if !merged.iter().any(|(h, _)| h.chunk_id == hit.chunk_id) {
                        merged.push((hit, 1u8));
                    }
                }
            }
            Err(message) => return ToolResult::Error { message },
        }
        merged.sort_by(|(a, sa), (b, sb)| {
            b.score
                .partial_cmp(&a.score)
                .expect("scores are finite")
                .then(sa.cmp(sb))
                .then_with(|| a.chunk_id.cmp(&b.chunk_id))
        });
    }

    let hits: Vec<SearchHit> = merged.into_iter().map(|(h, _)| h).collect();
    for hit in &hits {
        state.admit(&hit.chunk_id);
    }
    ToolResult::Search { hits }
}

/// Removes ids from the working set. Unknown ids are echoed back, not
/// errors; duplicates in the request count once.
pub(crate) fn exec_chunk_delete(state: &mut AgentState, chunk_ids: &[String]) -> ToolResult {
    let mut deleted = Vec::new();
    let mut unknown = Vec::new();
    for id in chunk_ids {
        if deleted.contains(id) || unknown.contains(id) {
            continue;
        }
        if let Some(pos) = state.working_set.iter().position(|w| w == id) {
            state.working_set.remove(pos);
            deleted.push(id.clone());
        } else {
            unknown.push(id.clone());
        }
    }
    ToolResult::Delete { deleted, unknown }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{build_index, EmbedderConfig, IndexConfig};
    use crate::testkit::corpus_fixtures;

    fn setup() -> Index {
        let corpus = corpus_fixtures::benchmark_corpus();
        build_index(&corpus, &EmbedderConfig::default(), &IndexConfig::default()).unwrap()
    }

    #[test]
    fn search_appends_only_new_ids_in_result_order() {
        let index = setup();
        let mut state = AgentState::default();
        let cfg = AgentConfig { fallback_on_first_search: false, ..AgentConfig::default() };
        let r1 = exec_chunk_search(&mut state, &index, "orig", "t04core program cycle", &cfg);
        let ToolResult::Search { hits: h1 } = r1 else { panic!("search result") };
        assert_eq!(h1.len(), 5);
        assert_eq!(
            state.working_set,
            h1.iter().map(|h| h.chunk_id.clone()).collect::<Vec<_>>()
        );

        let before = state.working_set.clone();
        let r2 = exec_chunk_search(&mut state, &index, "orig", "t04core program cycle", &cfg);
        let ToolResult::Search { hits: h2 } = r2 else { panic!("search result") };
        assert_eq!(h2.len(), 5);
        assert_eq!(state.working_set, before, "same hits add nothing");
        assert_eq!(state.search_count, 2);
    }

    #[test]
    fn identical_model_and_original_queries_collapse_to_one_result_set() {
        let index = setup();
        let mut state = AgentState::default();
        let cfg = AgentConfig::default();
        let q = "t09core program cycle";
        let r = exec_chunk_search(&mut state, &index, q, q, &cfg);
        let ToolResult::Search { hits } = r else { panic!("search result") };
        assert_eq!(hits.len(), 5, "dedup collapses the duplicate fallback");
        assert!(state.fallback_executed);
    }

    #[test]
    fn fallback_recovers_a_chunk_the_drifted_query_misses() {
        let index = setup();
        let mut state = AgentState::default();
        let cfg = AgentConfig::default();
        let original = format!("survey code {}", corpus_fixtures::fact_token(3, 5));
        let drifted = "t07meta office filings";
        let r = exec_chunk_search(&mut state, &index, &original, drifted, &cfg);
        let ToolResult::Search { hits } = r else { panic!("search result") };
        let golden = corpus_fixtures::topic_chunk_id(3, 5);
        assert!(
            hits.iter().any(|h| h.chunk_id == golden),
            "fallback on the original query must recover {golden}"
        );
        assert!(hits.len() > 5, "merge keeps both result lists");
    }

    #[test]
    fn fallback_runs_only_on_the_first_search() {
        let index = setup();
        let mut state = AgentState::default();
        let cfg = AgentConfig::default();
        let original = format!("survey code {}", corpus_fixtures::fact_token(3, 5));
        exec_chunk_search(&mut state, &index, &original, "t07meta office filings", &cfg);
        state.working_set.clear();
        let r = exec_chunk_search(&mut state, &index, &original, "t07meta office filings", &cfg);
        let ToolResult::Search { hits } = r else { panic!("search result") };
        assert_eq!(hits.len(), 5, "no fallback merge on the second search");
        let golden = corpus_fixtures::topic_chunk_id(3, 5);
        assert!(!hits.iter().any(|h| h.chunk_id == golden));
    }

    #[test]
    fn token_free_query_reports_a_tool_error() {
        let index = setup();
        let mut state = AgentState::default();
        let cfg = AgentConfig::default();
        let r = exec_chunk_search(&mut state, &index, "orig", "...", &cfg);
        assert!(matches!(r, ToolResult::Error { .. }));
        assert!(state.working_set.is_empty());
    }

    #[test]
    fn delete_splits_known_and_unknown_ids() {
        let mut state = AgentState {
            working_set: vec!["a#0000".into(), "b#0000".into(), "c#0000".into()],
            ..AgentState::default()
        };
        let r = exec_chunk_delete(
            &mut state,
            &["b#0000".into(), "nope#0000".into(), "b#0000".into()],
        );
        let ToolResult::Delete { deleted, unknown } = r else { panic!("delete result") };
        assert_eq!(deleted, vec!["b#0000".to_string()]);
        assert_eq!(unknown, vec!["nope#0000".to_string()]);
        assert_eq!(state.working_set, vec!["a#0000".to_string(), "c#0000".to_string()]);
    }

    #[test]
    fn delete_everything_empties_the_working_set() {
        let mut state = AgentState {
            working_set: vec!["a#0000".into(), "b#0000".into()],
            ..AgentState::default()
        };
        let ids = state.working_set.clone();
        let r = exec_chunk_delete(&mut state, &ids);
        let ToolResult::Delete { deleted, unknown } = r else { panic!("delete result") };
        assert_eq!(deleted, ids);
        assert!(unknown.is_empty());
        assert!(state.working_set.is_empty());
    }

    #[test]
    fn token_constrained_fallback_respects_its_budget() {
        let index = setup();
        let mut state = AgentState::default();
        let cfg = AgentConfig {
            fallback_retriever: FallbackRetriever::TokenConstrained,
            fallback_budget: Some(crate::oneshot::Budget::new(
                3 * corpus_fixtures::CHUNK_TOKENS + 1,
                1,
            )),
            ..AgentConfig::default()
        };
        let r = exec_chunk_search(&mut state, &index, "t02meta office ledger", "unrelated qxz", &cfg);
        let ToolResult::Search { hits } = r else { panic!("search result") };
        let fallback_count = hits
            .iter()
            .filter(|h| h.chunk_id.starts_with("topic02"))
            .count();
        assert!(fallback_count >= 1, "budgeted fallback contributes hits");
        assert!(hits.len() <= cfg.k_per_search + 3, "at most k plus the budgeted picks");
    }
}
