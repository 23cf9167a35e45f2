//! Rule-based drop/add refinement of a packed selection.
//!
//! Drop removes chunks whose metadata contradicts the query on a dimension
//! both sides populate; a chunk with no metadata on a dimension is never
//! dropped for it. Add then refills the freed budget with neighbors of the
//! survivors and same-document chunks whose metadata matches the query,
//! admitted in search-ranking order. Survivors are never evicted.

use std::collections::BTreeSet;

use super::{meta_mismatch, select_token_constrained, Budget, Candidate, FilterRules, Selection};
use crate::corpus::{extract_metadata, Chunk, ChunkMeta, CorpusStore, Gazetteer};
use crate::index::ScoredChunk;

/// Reads query-side metadata with the same grammar used at ingest.
pub fn extract_query_meta(query: &str, gazetteer: &Gazetteer) -> ChunkMeta {
    extract_metadata(query, gazetteer, true)
}

pub fn chunk_filter(
    selection: &Selection,
    query_meta: &ChunkMeta,
    ranking: &[ScoredChunk],
    corpus: &CorpusStore,
    rules: &FilterRules,
    budget: &Budget,
) -> Selection {
    if query_meta.is_empty() {
        return selection.clone();
    }

    let survivors: Vec<Candidate> = selection
        .chosen
        .iter()
        .filter(|c| !meta_mismatch(&c.chunk.meta, query_meta, rules))
        .cloned()
        .collect();
    let survivor_ids: BTreeSet<&str> =
        survivors.iter().map(|c| c.chunk.chunk_id.as_str()).collect();
    let survivor_tokens: usize = survivors.iter().map(|c| c.tokens).sum();

    let mut addable: BTreeSet<String> = BTreeSet::new();
    let mut consider = |chunk: &Chunk, require_meta_match: bool| {
        if survivor_ids.contains(chunk.chunk_id.as_str()) {
            return;
        }
        if require_meta_match && !chunk.meta.intersects(query_meta) {
            return;
        }
        if meta_mismatch(&chunk.meta, query_meta, rules) {
            return;
        }
        addable.insert(chunk.chunk_id.clone());
    };
    for cand in &survivors {
        if rules.add_neighbor_chunks {
            for neighbor in corpus.neighbors(&cand.chunk.chunk_id) {
                consider(neighbor, false);
            }
        }
        if rules.add_same_doc_matching_meta {
            for chunk in corpus.doc_chunks(&cand.chunk.doc_id) {
                consider(chunk, true);
            }
        }
    }

    // admissions draw their scores and their order from the ranking
    let mut refill = budget.available().saturating_sub(survivor_tokens);
    let mut chosen = survivors;
    for scored in ranking {
        if refill == 0 {
            break;
        }
        if !addable.contains(scored.chunk_id.as_str()) {
            continue;
        }
        let tokens = scored.chunk.token_count;
        if tokens <= refill {
            chosen.push(Candidate::from_scored(scored));
            refill -= tokens;
        }
    }

    // final safety pass; everything fits by construction, so nothing is
    // evicted and totals are recomputed in one place
    let sel = select_token_constrained(&chosen, budget);
    debug_assert_eq!(sel.chosen.len(), chosen.len());
    sel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ChunkingConfig, CorpusStore, Document, TokenizerConfig};
    use crate::index::{build_index, EmbedderConfig, Index, IndexConfig};
    use crate::testkit::corpus_fixtures;

    fn small_budget(available: usize) -> Budget {
        Budget::new(available + 1, 1)
    }

    /// Three-document corpus with controlled years and places, one
    /// paragraph per chunk.
    fn filter_corpus() -> CorpusStore {
        let docs = vec![
            Document {
                doc_id: "alpha".into(),
                title: "alpha".into(),
                body: "the survey of 2023 covered kunming orchards in detail.\n\n\
                       a later 2023 addendum lists the kunming growers.\n\n\
                       general notes with no dated material at all."
                    .into(),
                source: None,
            },
            Document {
                doc_id: "beta".into(),
                title: "beta".into(),
                body: "the 2019 census in reykjavik counted harbor traffic.\n\n\
                       the reykjavik follow-up of 2019 added ferry records."
                    .into(),
                source: None,
            },
            Document {
                doc_id: "gamma".into(),
                title: "gamma".into(),
                body: "undated commentary about farming practices in general.".into(),
                source: None,
            },
        ];
        // the paragraphs run 8 or 9 tokens, so a target of 10 keeps every
        // paragraph in its own chunk
        let chunking = ChunkingConfig {
            boundary: crate::corpus::BoundaryMode::Paragraph,
            target_tokens: 10,
            overlap_tokens: 0,
            expand_year_ranges: true,
        };
        CorpusStore::ingest_documents(
            docs,
            &chunking,
            &TokenizerConfig::unicode_words(),
            &Gazetteer::builtin(),
        )
        .unwrap()
    }

    fn indexed(corpus: &CorpusStore) -> Index {
        build_index(corpus, &EmbedderConfig::default(), &IndexConfig::default()).unwrap()
    }

    fn selection_of(ranking: &[ScoredChunk], ids: &[&str]) -> Selection {
        let chosen: Vec<Candidate> = ids
            .iter()
            .map(|id| {
                Candidate::from_scored(
                    ranking.iter().find(|s| s.chunk_id == *id).expect("id in ranking"),
                )
            })
            .collect();
        Selection::from_chosen(chosen)
    }

    #[test]
    fn empty_query_meta_is_a_no_op() {
        let corpus = filter_corpus();
        let index = indexed(&corpus);
        let ranking = index.search_all("farming commentary").unwrap();
        let sel = selection_of(&ranking, &["gamma#0000", "alpha#0002"]);
        let out = chunk_filter(
            &sel,
            &ChunkMeta::default(),
            &ranking,
            &corpus,
            &FilterRules::default(),
            &Budget::default(),
        );
        assert_eq!(out.chunk_ids(), sel.chunk_ids());
        assert_eq!(out.total_tokens, sel.total_tokens);
    }

    #[test]
    fn year_mismatch_drops_and_year_match_survives() {
        let corpus = filter_corpus();
        let index = indexed(&corpus);
        let ranking = index.search_all("survey records of 2023").unwrap();
        let sel = selection_of(&ranking, &["alpha#0000", "beta#0000"]);
        let query_meta = extract_query_meta("survey records of 2023", &Gazetteer::builtin());
        let mut rules = FilterRules::default();
        rules.add_neighbor_chunks = false;
        rules.add_same_doc_matching_meta = false;
        let out = chunk_filter(&sel, &query_meta, &ranking, &corpus, &rules, &Budget::default());
        assert!(out.contains("alpha#0000"));
        assert!(!out.contains("beta#0000"));
    }

    #[test]
    fn chunks_without_metadata_never_drop() {
        let corpus = filter_corpus();
        let index = indexed(&corpus);
        let ranking = index.search_all("notes from 2023").unwrap();
        let sel = selection_of(&ranking, &["alpha#0002", "gamma#0000"]);
        let query_meta = extract_query_meta("notes from 2023", &Gazetteer::builtin());
        let mut rules = FilterRules::default();
        rules.add_neighbor_chunks = false;
        rules.add_same_doc_matching_meta = false;
        let out = chunk_filter(&sel, &query_meta, &ranking, &corpus, &rules, &Budget::default());
        assert!(out.contains("alpha#0002"));
        assert!(out.contains("gamma#0000"));
    }

    #[test]
    fn location_mismatch_drops_when_required() {
        let corpus = filter_corpus();
        let index = indexed(&corpus);
        let query = "growers near kunming in recent seasons";
        let ranking = index.search_all(query).unwrap();
        let sel = selection_of(&ranking, &["alpha#0001", "beta#0001"]);
        let query_meta = extract_query_meta(query, &Gazetteer::builtin());
        assert!(query_meta.locations.contains("kunming"));
        let mut rules = FilterRules::default();
        rules.add_neighbor_chunks = false;
        rules.add_same_doc_matching_meta = false;
        let out = chunk_filter(&sel, &query_meta, &ranking, &corpus, &rules, &Budget::default());
        assert!(out.contains("alpha#0001"));
        assert!(!out.contains("beta#0001"));

        rules.require_location_alignment = false;
        let kept =
            chunk_filter(&sel, &query_meta, &ranking, &corpus, &rules, &Budget::default());
        assert!(kept.contains("beta#0001"));
    }

    #[test]
    fn add_refills_with_neighbors_and_matching_same_doc_chunks() {
        let corpus = filter_corpus();
        let index = indexed(&corpus);
        let query = "kunming survey of 2023";
        let ranking = index.search_all(query).unwrap();
        let sel = selection_of(&ranking, &["alpha#0000"]);
        let query_meta = extract_query_meta(query, &Gazetteer::builtin());
        let out = chunk_filter(
            &sel,
            &query_meta,
            &ranking,
            &corpus,
            &FilterRules::default(),
            &Budget::default(),
        );
        assert!(out.contains("alpha#0000"));
        assert!(out.contains("alpha#0001"), "neighbor with matching meta admitted");
        assert!(!out.contains("beta#0000"), "unrelated document untouched");
    }

    #[test]
    fn add_never_evicts_a_surviving_chunk() {
        let corpus = filter_corpus();
        let index = indexed(&corpus);
        let query = "kunming survey of 2023";
        let ranking = index.search_all(query).unwrap();
        let sel = selection_of(&ranking, &["alpha#0000"]);
        let survivor_tokens = sel.total_tokens;
        let query_meta = extract_query_meta(query, &Gazetteer::builtin());
        // budget with room for the survivor plus a couple of tokens: no
        // addition fits, and the survivor must stay
        let tight = small_budget(survivor_tokens + 2);
        let out = chunk_filter(
            &sel,
            &query_meta,
            &ranking,
            &corpus,
            &FilterRules::default(),
            &tight,
        );
        assert_eq!(out.chunk_ids(), vec!["alpha#0000".to_string()]);
        assert!(out.total_tokens <= tight.available());
    }

    #[test]
    fn planted_distractors_lose_to_golden_chunks_once_filtered() {
        let corpus = corpus_fixtures::benchmark_corpus();
        // a wider embedding keeps hash-collision noise well under the
        // designed score margins, so the scenario is about the filter, not
        // about bucket collisions
        let embedder = EmbedderConfig { dim: 4096, ..EmbedderConfig::default() };
        let index = build_index(&corpus, &embedder, &IndexConfig::default()).unwrap();
        let topic = 16usize;
        let (query, golden) = corpus_fixtures::filter_probe(topic);
        // the paragraphs whose years sit inside the queried range but whose
        // text shares no year token with the query
        let meta_only = corpus_fixtures::topic_chunk_id(topic, 2);
        assert!(golden.contains(&meta_only));
        let reviews: Vec<String> = (0..corpus_fixtures::REVIEW_PARAS)
            .map(|i| {
                corpus_fixtures::topic_chunk_id(topic, corpus_fixtures::PARAS_PER_TOPIC + i)
            })
            .collect();
        let ranking = index.search_all(&query).unwrap();

        let budget = small_budget(5 * corpus_fixtures::CHUNK_TOKENS);
        let candidates: Vec<Candidate> =
            ranking.iter().map(Candidate::from_scored).collect();
        let sel = select_token_constrained(&candidates, &budget);
        assert_eq!(sel.chosen.len(), 5);
        let crowding = reviews.iter().filter(|id| sel.contains(id)).count();
        assert!(
            crowding >= 3,
            "stuffed reviews should crowd the window, got {:?}",
            sel.chunk_ids()
        );
        assert!(
            !sel.contains(&meta_only),
            "the mid-range paragraph must start outside the window, got {:?}",
            sel.chunk_ids()
        );
        let recall_before =
            golden.iter().filter(|id| sel.contains(id)).count() as f64 / golden.len() as f64;

        let query_meta = extract_query_meta(&query, &Gazetteer::builtin());
        assert_eq!(query_meta.years.len(), 4);
        let out = chunk_filter(
            &sel,
            &query_meta,
            &ranking,
            &corpus,
            &FilterRules::default(),
            &budget,
        );
        let recall_after =
            golden.iter().filter(|id| out.contains(id)).count() as f64 / golden.len() as f64;
        assert!(
            recall_after > recall_before,
            "recall {recall_before} -> {recall_after}, selection {:?}",
            out.chunk_ids()
        );
        assert_eq!(recall_after, 1.0, "selection {:?}", out.chunk_ids());
        assert!(
            out.contains(&meta_only),
            "metadata add must reach the paragraph no query token touches, got {:?}",
            out.chunk_ids()
        );
        for review in &reviews {
            assert!(!out.contains(review), "review {review} must stay dropped");
        }
        assert!(out.total_tokens <= budget.available());
    }
}
