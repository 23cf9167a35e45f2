//! Retrieval orchestration engine.
//!
//! The crate is organized as a stack: `corpus` ingests and chunks documents,
//! `index` builds lexical and dense structures over the chunks, `oneshot`
//! selects evidence under a token budget in a single pass, `agent` runs the
//! multi-turn search loop, `llm` abstracts the model backends, and `eval`
//! scores pipelines against question sets. Everything is deterministic for a
//! fixed corpus, config, and backend script: sorted maps, stable tie-breaks,
//! and no wall-clock anywhere in serialized output.

pub mod agent;
pub mod corpus;
pub mod eval;
pub mod index;
pub mod llm;
pub mod oneshot;

pub use agent::{
    drift_score, parse_assistant_message, run_combined, run_iterative, transcript_events,
    write_transcript, AgentConfig, AgentError, FallbackRetriever, ParsedMessage, SearchHit,
    Termination, ToolCall, ToolResult, Transcript, Turn,
};
pub use corpus::{
    BoundaryMode, Chunk, ChunkMeta, ChunkingConfig, CorpusStore, Document, Gazetteer,
    TokenizerConfig, TokenizerMode,
};
pub use eval::{
    laziness_experiment, laziness_policy, load_questions, retention_report, run_benchmark,
    write_laziness_csv, write_report, EvalError, EvalSetup, JudgeSetup, LazinessConfig,
    LazinessMode, LazinessPoint, PaddingSource, Pipeline, Question, RunReport,
};
pub use index::{build_index, EmbedderConfig, EmbedderMode, Index, IndexConfig, ScoredChunk};
pub use llm::{
    judge, lexical_score, BackendConfig, BackendKind, ChatBackend, ChatMessage, JudgeVerdict,
    LlmError, Role, ScriptRule, ScriptedBackend,
};
pub use oneshot::{
    answer_from_chunks, chunk_crop, chunk_filter, crop_chunks, extract_query_meta,
    knapsack_exact, retention_ratio, run_oneshot, select_token_constrained, Budget, Candidate,
    CropResult, FilterRules, OneshotError, OneshotRecord, RetentionRatios, Selection, StageTrace,
    Stages,
};

/// Test-only corpus and script builders, compiled into the library so the
/// CLI's integration tests and the benches can reuse them.
pub mod testkit;
