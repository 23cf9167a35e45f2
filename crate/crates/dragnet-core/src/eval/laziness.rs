//! Retrieval-laziness experiment: pad a first tool result with irrelevant
//! chunks until the conversation reaches a target token length, then measure
//! how often the next model action is another `chunk_search`.
//!
//! Two ways to drive it: wire mode sends every padded context to a real
//! backend, where sampling makes trials differ; scripted-policy mode skips
//! the backend entirely and draws each trial from a fixed probability curve,
//! which keeps harness tests deterministic. Live-model runs are expected to
//! show a declining curve in the region of 95/90/50/25% at 3k/6k/9k/12k
//! tokens; those numbers characterize models, not this code, so they are
//! documented rather than asserted.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{build_context, measure, parse_assistant_message, SearchHit, ToolResult, Turn};
use crate::agent::{AgentConfig, ToolCall};
use crate::corpus::{ChunkMeta, CorpusStore, Gazetteer};
use crate::eval::{EvalError, Question};
use crate::index::Index;
use crate::llm::ChatBackend;
use crate::oneshot::extract_query_meta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingSource {
    /// Real chunks with zero metadata overlap with the question, drawn from
    /// the bottom relevance decile. Honest but finite: a small corpus runs
    /// out before large targets.
    CorpusIrrelevant,
    /// Generated filler prose; unlimited, so any target is reachable.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LazinessConfig {
    pub context_lengths: Vec<usize>,
    pub trials_per_length: usize,
    pub padding_source: PaddingSource,
}

impl Default for LazinessConfig {
    fn default() -> Self {
        Self {
            context_lengths: vec![3000, 6000, 9000, 12000],
            trials_per_length: 20,
            padding_source: PaddingSource::Synthetic,
        }
    }
}

impl LazinessConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.context_lengths.is_empty() {
            return Err(EvalError::ConfigInvalid("context_lengths must be non-empty".into()));
        }
        if !self.context_lengths.windows(2).all(|w| w[0] < w[1]) {
            return Err(EvalError::ConfigInvalid(
                "context_lengths must be strictly increasing".into(),
            ));
        }
        if self.trials_per_length == 0 {
            return Err(EvalError::ConfigInvalid("trials_per_length must be at least 1".into()));
        }
        Ok(())
    }
}

pub enum LazinessMode<'a> {
    /// Deterministic stand-in for a sampled model: p(search) falls linearly
    /// from 1.25 at zero context to 0.25 at 12k tokens, clamped to [0, 1].
    ScriptedPolicy,
    Wire(&'a dyn ChatBackend),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LazinessPoint {
    pub context_tokens: usize,
    pub trials: usize,
    pub follow_up_probability: f64,
}

pub fn laziness_policy(context_tokens: usize) -> f64 {
    (1.25 - context_tokens as f64 / 12000.0).clamp(0.0, 1.0)
}

/// Runs the padding experiment over every target length. The index is never
/// touched beyond read-only searches; padding lives only in the rendered
/// conversation.
pub fn laziness_experiment(
    question: &Question,
    cfg: &LazinessConfig,
    agent_cfg: &AgentConfig,
    corpus: &CorpusStore,
    index: &Index,
    gazetteer: &Gazetteer,
    mode: &LazinessMode<'_>,
) -> Result<Vec<LazinessPoint>, EvalError> {
    cfg.validate()?;
    agent_cfg.validate().map_err(|e| EvalError::ConfigInvalid(e.to_string()))?;

    let base_hits: Vec<SearchHit> = index
        .search(&question.question, agent_cfg.k_per_search)
        .map_err(|e| EvalError::ConfigInvalid(format!("turn-0 search failed: {e}")))?
        .iter()
        .map(SearchHit::from_scored)
        .collect();
    let padding = padding_pool(question, cfg.padding_source, index, gazetteer)?;

    let mut points = Vec::with_capacity(cfg.context_lengths.len());
    for &target in &cfg.context_lengths {
        let turn =
            padded_turn(question, agent_cfg, corpus, &base_hits, padding.as_deref(), target)?;
        let probability = match mode {
            LazinessMode::ScriptedPolicy => {
                let p = laziness_policy(target);
                let trials = cfg.trials_per_length;
                let searched = (0..trials)
                    .filter(|i| (*i as f64 + 0.5) / (trials as f64) < p)
                    .count();
                searched as f64 / trials as f64
            }
            LazinessMode::Wire(backend) => {
                let messages = build_context(
                    &question.question,
                    std::slice::from_ref(&turn),
                    &turn.working_set_after,
                    agent_cfg.enable_chunk_delete,
                );
                let mut searched = 0usize;
                for _ in 0..cfg.trials_per_length {
                    let reply = backend
                        .chat(&messages)
                        .map_err(|e| EvalError::Backend { target, source: e })?;
                    let parsed = parse_assistant_message(&reply.content);
                    if parsed
                        .tool_calls
                        .iter()
                        .any(|c| matches!(c, ToolCall::ChunkSearch { .. }))
                    {
                        searched += 1;
                    }
                }
                searched as f64 / cfg.trials_per_length as f64
            }
        };
        points.push(LazinessPoint {
            context_tokens: target,
            trials: cfg.trials_per_length,
            follow_up_probability: probability,
        });
    }
    Ok(points)
}

/// Candidate padding hits, least relevant first, never including a golden
/// chunk for the question. `None` means the synthetic generator, which never
/// runs out.
fn padding_pool(
    question: &Question,
    source: PaddingSource,
    index: &Index,
    gazetteer: &Gazetteer,
) -> Result<Option<Vec<SearchHit>>, EvalError> {
    match source {
        PaddingSource::Synthetic => Ok(None),
        PaddingSource::CorpusIrrelevant => {
            let ranking = index
                .search_all(&question.question)
                .map_err(|e| EvalError::ConfigInvalid(format!("padding search failed: {e}")))?;
            let query_meta = extract_query_meta(&question.question, gazetteer);
            let decile = ranking.len().div_ceil(10);
            let pool = ranking[ranking.len() - decile..]
                .iter()
                .rev()
                .filter(|s| {
                    s.chunk.meta.years.is_disjoint(&query_meta.years)
                        && s.chunk.meta.locations.is_disjoint(&query_meta.locations)
                        && s.chunk.meta.entities.is_disjoint(&query_meta.entities)
                        && !question.golden_chunk_ids.contains(&s.chunk_id)
                })
                .map(SearchHit::from_scored)
                .collect();
            Ok(Some(pool))
        }
    }
}

fn synthetic_hit(ordinal: usize) -> SearchHit {
    const OFFICES: [&str; 5] = [
        "the district filing room",
        "the records annex",
        "the archival depot",
        "the clerical pool",
        "the storage wing",
    ];
    const ACTIONS: [&str; 4] = [
        "rebound the older folios and logged the shelf positions",
        "audited the stationery ledgers against the supply receipts",
        "recounted the blank forms held in reserve",
        "retired the superseded binders to long-term storage",
    ];
    let mut sentences = Vec::new();
    for s in 0..6 {
        let office = OFFICES[(ordinal + s) % OFFICES.len()];
        let action = ACTIONS[(ordinal * 3 + s) % ACTIONS.len()];
        sentences.push(format!(
            "During routine upkeep batch {}, {office} {action} without touching any survey material.",
            ordinal * 6 + s
        ));
    }
    SearchHit {
        chunk_id: format!("pad#{ordinal:04}"),
        score: 0.0,
        meta: ChunkMeta::default(),
        text: sentences.join(" "),
    }
}

/// Builds the single padded turn for one target length: the question's own
/// top-k result plus however many irrelevant hits the context needs to
/// measure at or just past the target.
fn padded_turn(
    question: &Question,
    agent_cfg: &AgentConfig,
    corpus: &CorpusStore,
    base_hits: &[SearchHit],
    padding: Option<&[SearchHit]>,
    target: usize,
) -> Result<Turn, EvalError> {
    let mut hits = base_hits.to_vec();
    let mut next_pad = 0usize;
    loop {
        let turn = assemble_turn(question, &hits);
        let messages = build_context(
            &question.question,
            std::slice::from_ref(&turn),
            &turn.working_set_after,
            agent_cfg.enable_chunk_delete,
        );
        let reached = measure(&messages, corpus.tokenizer());
        if reached >= target {
            return Ok(Turn { context_tokens_after: reached, ..turn });
        }
        let hit = match padding {
            None => synthetic_hit(next_pad),
            Some(pool) => match pool.get(next_pad) {
                Some(h) => h.clone(),
                None => return Err(EvalError::PaddingExhausted { target, reached }),
            },
        };
        hits.push(hit);
        next_pad += 1;
    }
}

fn assemble_turn(question: &Question, hits: &[SearchHit]) -> Turn {
    Turn {
        index: 0,
        think_text: "The first pass may not cover the whole trail; checking what came back."
            .to_string(),
        tool_calls: vec![ToolCall::ChunkSearch { query: question.question.clone() }],
        tool_results: vec![ToolResult::Search { hits: hits.to_vec() }],
        working_set_after: hits.iter().map(|h| h.chunk_id.clone()).collect(),
        context_tokens_after: 0,
    }
}

pub fn write_laziness_csv(points: &[LazinessPoint], path: &Path) -> Result<(), EvalError> {
    let mut out = String::from("context_tokens,trials,follow_up_probability\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{:.3}\n",
            p.context_tokens, p.trials, p.follow_up_probability
        ));
    }
    fs::write(path, out).map_err(|e| EvalError::Io { path: path.to_path_buf(), source: e })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ScriptRule, ScriptedBackend};
    use crate::testkit::question_fixtures::{
        self, answer_reply, benchmark_questions, eval_agent_config, search_reply,
    };
    use crate::testkit::corpus_fixtures::benchmark_corpus;

    fn fixture() -> (CorpusStore, Index, Gazetteer) {
        let corpus = benchmark_corpus();
        let index = question_fixtures::lexical_index(&corpus);
        (corpus, index, Gazetteer::builtin())
    }

    fn hop_question() -> Question {
        benchmark_questions().remove(8)
    }

    #[test]
    fn the_policy_hits_the_documented_reference_points() {
        assert_eq!(laziness_policy(3000), 1.0);
        assert_eq!(laziness_policy(6000), 0.75);
        assert_eq!(laziness_policy(9000), 0.5);
        assert_eq!(laziness_policy(12000), 0.25);
        assert_eq!(laziness_policy(0), 1.0);
        assert_eq!(laziness_policy(24000), 0.0);
    }

    #[test]
    fn scripted_mode_reproduces_the_policy_curve_exactly() {
        let (corpus, index, gaz) = fixture();
        let points = laziness_experiment(
            &hop_question(),
            &LazinessConfig::default(),
            &eval_agent_config(),
            &corpus,
            &index,
            &gaz,
            &LazinessMode::ScriptedPolicy,
        )
        .unwrap();
        let expected: Vec<LazinessPoint> = [(3000, 1.0), (6000, 0.75), (9000, 0.5), (12000, 0.25)]
            .into_iter()
            .map(|(context_tokens, follow_up_probability)| LazinessPoint {
                context_tokens,
                trials: 20,
                follow_up_probability,
            })
            .collect();
        assert_eq!(points, expected);
        for pair in points.windows(2) {
            assert!(pair[0].follow_up_probability > pair[1].follow_up_probability);
        }
    }

    #[test]
    fn corpus_padding_runs_out_honestly_on_the_small_corpus() {
        let (corpus, index, gaz) = fixture();
        let cfg = LazinessConfig {
            context_lengths: vec![12000],
            trials_per_length: 1,
            padding_source: PaddingSource::CorpusIrrelevant,
        };
        let err = laziness_experiment(
            &hop_question(),
            &cfg,
            &eval_agent_config(),
            &corpus,
            &index,
            &gaz,
            &LazinessMode::ScriptedPolicy,
        )
        .unwrap_err();
        let EvalError::PaddingExhausted { target, reached } = err else {
            panic!("expected exhaustion, got {err}");
        };
        assert_eq!(target, 12000);
        assert!(reached > 0 && reached < 12000, "reached {reached}");

        // The length the pool did reach is attainable.
        let attainable = LazinessConfig { context_lengths: vec![reached], ..cfg };
        let points = laziness_experiment(
            &hop_question(),
            &attainable,
            &eval_agent_config(),
            &corpus,
            &index,
            &gaz,
            &LazinessMode::ScriptedPolicy,
        )
        .unwrap();
        assert_eq!(points.len(), 1);
        assert_eq!(points[0].context_tokens, reached);
    }

    #[test]
    fn wire_mode_counts_each_trials_next_action() {
        let (corpus, index, gaz) = fixture();
        let cfg = LazinessConfig {
            context_lengths: vec![3000],
            trials_per_length: 4,
            padding_source: PaddingSource::Synthetic,
        };
        let run = |backend: &ScriptedBackend| {
            laziness_experiment(
                &hop_question(),
                &cfg,
                &eval_agent_config(),
                &corpus,
                &index,
                &gaz,
                &LazinessMode::Wire(backend),
            )
            .unwrap()
        };

        let one_then_stop = ScriptedBackend::from_rules(vec![
            ScriptRule::on_contains("pad#", search_reply("one more pass", "referral file lnk08x"))
                .once(),
            ScriptRule::fallback(answer_reply("enough", "the trail ends here.")),
        ])
        .unwrap();
        assert_eq!(run(&one_then_stop)[0].follow_up_probability, 0.25);

        let always_searches = ScriptedBackend::from_rules(vec![ScriptRule::fallback(
            search_reply("keep digging", "referral file lnk08x"),
        )])
        .unwrap();
        assert_eq!(run(&always_searches)[0].follow_up_probability, 1.0);

        let garbled = ScriptedBackend::from_rules(vec![ScriptRule::fallback(
            "<think>hm</think>\n<tool_call>not json</tool_call>",
        )])
        .unwrap();
        assert_eq!(run(&garbled)[0].follow_up_probability, 0.0);
    }

    #[test]
    fn csv_output_is_stable() {
        let points = vec![
            LazinessPoint { context_tokens: 3000, trials: 20, follow_up_probability: 1.0 },
            LazinessPoint { context_tokens: 6000, trials: 20, follow_up_probability: 0.75 },
            LazinessPoint { context_tokens: 9000, trials: 20, follow_up_probability: 0.5 },
            LazinessPoint { context_tokens: 12000, trials: 20, follow_up_probability: 0.25 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("laziness.csv");
        write_laziness_csv(&points, &path).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            "context_tokens,trials,follow_up_probability\n\
             3000,20,1.000\n6000,20,0.750\n9000,20,0.500\n12000,20,0.250\n"
        );
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        let (corpus, index, gaz) = fixture();
        let cases = [
            LazinessConfig { context_lengths: vec![], ..LazinessConfig::default() },
            LazinessConfig { context_lengths: vec![3000, 3000], ..LazinessConfig::default() },
            LazinessConfig { trials_per_length: 0, ..LazinessConfig::default() },
        ];
        for cfg in cases {
            let err = laziness_experiment(
                &hop_question(),
                &cfg,
                &eval_agent_config(),
                &corpus,
                &index,
                &gaz,
                &LazinessMode::ScriptedPolicy,
            )
            .unwrap_err();
            assert!(matches!(err, EvalError::ConfigInvalid(_)), "{err}");
        }
    }
}
