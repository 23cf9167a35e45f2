//! Benchmark harness: question sets, pipeline runs, scoring, reports.
//!
//! Questions are graded two ways at once: a judge (model-backed or the
//! lexical fallback) scores the answer text, and planted golden facts are
//! checked verbatim. Retrieval quality is measured as golden recall over
//! the evidence that actually reached the final generation prompt, never
//! over intermediate result lists.

mod laziness;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_combined, run_iterative, Termination, ToolResult, Transcript};
use crate::corpus::{CorpusStore, Gazetteer};
use crate::index::Index;
use crate::llm::{judge_with_backend, lexical_score, ChatBackend, Semaphore};
use crate::oneshot::{
    answer_from_chunks, retention_ratio, run_oneshot, Budget, FilterRules, StageRatio, StageTrace,
    Stages,
};
use crate::AgentConfig;

pub use laziness::{
    laziness_experiment, laziness_policy, write_laziness_csv, LazinessConfig, LazinessMode,
    LazinessPoint, PaddingSource,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub qid: String,
    pub level: u8,
    pub question: String,
    pub reference_answer: String,
    pub golden_chunk_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub golden_facts: Vec<String>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("question schema violation at {path}:{line}: {message}")]
    QuestionSchema { path: PathBuf, line: usize, message: String },
    #[error("golden chunk ids missing from the corpus: {0}")]
    UnresolvedGolden(String),
    #[error("eval config invalid: {0}")]
    ConfigInvalid(String),
    #[error("padding cannot reach {target} context tokens, got stuck at {reached}")]
    PaddingExhausted { target: usize, reached: usize },
    #[error("backend failed during a trial at {target} context tokens: {source}")]
    Backend { target: usize, source: crate::llm::LlmError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl EvalError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

/// Loads a JSONL question file and checks every golden chunk id against the
/// corpus, so a typo in a fixture fails loudly up front instead of reading
/// as a recall miss later.
pub fn load_questions(path: &Path, corpus: &CorpusStore) -> Result<Vec<Question>, EvalError> {
    let raw = fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
    let mut questions = Vec::new();
    let mut seen_qids = std::collections::BTreeSet::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let schema_err = |message: String| EvalError::QuestionSchema {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let q: Question = serde_json::from_str(line).map_err(|e| schema_err(e.to_string()))?;
        if !(1..=4).contains(&q.level) {
            return Err(schema_err(format!("level {} outside 1..=4", q.level)));
        }
        if q.qid.is_empty() || q.question.trim().is_empty() || q.reference_answer.trim().is_empty()
        {
            return Err(schema_err("qid, question, reference_answer must be non-empty".into()));
        }
        if !seen_qids.insert(q.qid.clone()) {
            return Err(schema_err(format!("duplicate qid {}", q.qid)));
        }
        questions.push(q);
    }
    let mut unresolved = Vec::new();
    for q in &questions {
        for id in &q.golden_chunk_ids {
            if corpus.chunk(id).is_none() {
                unresolved.push(format!("{}: {id}", q.qid));
            }
        }
    }
    if !unresolved.is_empty() {
        return Err(EvalError::UnresolvedGolden(unresolved.join(", ")));
    }
    Ok(questions)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    BasicTop5,
    Oneshot,
    Iterative,
    Combined,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::BasicTop5 => "basic_top5",
            Pipeline::Oneshot => "oneshot",
            Pipeline::Iterative => "iterative",
            Pipeline::Combined => "combined",
        }
    }
}

/// How answers get scored. The lexical judge needs no backend and keeps CI
/// hermetic; reports carry the label so nobody mistakes one for the other.
pub enum JudgeSetup<'a> {
    Lexical,
    Backend(&'a dyn ChatBackend),
}

impl JudgeSetup<'_> {
    fn label(&self) -> &'static str {
        match self {
            JudgeSetup::Lexical => "lexical_f1",
            JudgeSetup::Backend(_) => "model",
        }
    }
}

/// Everything a pipeline run needs besides the questions and backends.
pub struct EvalSetup<'a> {
    pub corpus: &'a CorpusStore,
    pub index: &'a Index,
    pub gazetteer: &'a Gazetteer,
    pub budget: Budget,
    pub filter_rules: FilterRules,
    pub stages: Stages,
    pub agent: AgentConfig,
    pub max_in_flight: usize,
}

impl<'a> EvalSetup<'a> {
    pub fn new(corpus: &'a CorpusStore, index: &'a Index, gazetteer: &'a Gazetteer) -> Self {
        Self {
            corpus,
            index,
            gazetteer,
            budget: Budget::default(),
            filter_rules: FilterRules::default(),
            stages: Stages::none(),
            agent: AgentConfig::default(),
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerQuestion {
    pub qid: String,
    pub level: u8,
    /// None means unscored; the flags say why.
    pub score: Option<f64>,
    pub search_count: usize,
    pub golden_recall: f64,
    pub golden_hit: bool,
    pub termination: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_trace: Option<StageTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelAggregate {
    pub n: usize,
    pub scored: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_score: Option<f64>,
    pub mean_search_count: f64,
    pub golden_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub pipeline: String,
    pub judge: String,
    pub per_level: BTreeMap<u8, LevelAggregate>,
    pub overall: LevelAggregate,
    pub per_question: Vec<PerQuestion>,
}

/// Runs every question through one pipeline and aggregates. Individual
/// question failures are recorded in their row; only a setup that could
/// never work is an error.
pub fn run_benchmark(
    questions: &[Question],
    pipeline: Pipeline,
    setup: &EvalSetup<'_>,
    backend: &dyn ChatBackend,
    judge: &JudgeSetup<'_>,
) -> Result<RunReport, EvalError> {
    setup
        .budget
        .validate()
        .map_err(|e| EvalError::ConfigInvalid(e.to_string()))?;
    setup.agent.validate().map_err(|e| EvalError::ConfigInvalid(e.to_string()))?;
    if setup.max_in_flight == 0 {
        return Err(EvalError::ConfigInvalid("max_in_flight must be at least 1".into()));
    }

    let mut rows: Vec<Option<PerQuestion>> = (0..questions.len()).map(|_| None).collect();
    let sem = Semaphore::new(setup.max_in_flight);
    std::thread::scope(|scope| {
        for (slot, question) in rows.iter_mut().zip(questions) {
            let sem = &sem;
            scope.spawn(move || {
                let _permit = sem.acquire();
                *slot = Some(eval_question(question, pipeline, setup, backend, judge));
            });
        }
    });
    let per_question: Vec<PerQuestion> =
        rows.into_iter().map(|r| r.expect("worker filled slot")).collect();

    let mut per_level = BTreeMap::new();
    for level in 1..=4u8 {
        let rows: Vec<&PerQuestion> =
            per_question.iter().filter(|q| q.level == level).collect();
        if !rows.is_empty() {
            per_level.insert(level, aggregate(&rows));
        }
    }
    let overall = aggregate(&per_question.iter().collect::<Vec<_>>());

    Ok(RunReport {
        pipeline: pipeline.name().to_string(),
        judge: judge.label().to_string(),
        per_level,
        overall,
        per_question,
    })
}

fn aggregate(rows: &[&PerQuestion]) -> LevelAggregate {
    let n = rows.len();
    let scored: Vec<f64> = rows.iter().filter_map(|q| q.score).collect();
    let mean = |values: &[f64]| values.iter().sum::<f64>() / values.len() as f64;
    LevelAggregate {
        n,
        scored: scored.len(),
        mean_score: if scored.is_empty() { None } else { Some(mean(&scored)) },
        mean_search_count: if n == 0 {
            0.0
        } else {
            rows.iter().map(|q| q.search_count as f64).sum::<f64>() / n as f64
        },
        golden_recall: if n == 0 {
            0.0
        } else {
            rows.iter().map(|q| q.golden_recall).sum::<f64>() / n as f64
        },
    }
}

struct PipelineOutcome {
    evidence: Vec<String>,
    answer: Option<String>,
    search_count: usize,
    termination: String,
    flags: Vec<String>,
    drift_mean: Option<f64>,
    stage_trace: Option<StageTrace>,
}

fn eval_question(
    q: &Question,
    pipeline: Pipeline,
    setup: &EvalSetup<'_>,
    backend: &dyn ChatBackend,
    judge: &JudgeSetup<'_>,
) -> PerQuestion {
    let outcome = run_pipeline(q, pipeline, setup, backend);

    let golden = &q.golden_chunk_ids;
    let hit = golden.iter().filter(|id| outcome.evidence.iter().any(|e| &e == id)).count();
    let golden_recall =
        if golden.is_empty() { 1.0 } else { hit as f64 / golden.len() as f64 };

    let mut flags = outcome.flags;
    let mut score = None;
    if let Some(answer) = &outcome.answer {
        match judge {
            JudgeSetup::Lexical => score = Some(lexical_score(&q.reference_answer, answer)),
            JudgeSetup::Backend(judge_backend) => {
                match judge_with_backend(&q.question, &q.reference_answer, answer, *judge_backend)
                {
                    Ok(verdict) => score = Some(verdict.score),
                    Err(e) => flags.push(format!("judge_unscored: {e}")),
                }
            }
        }
        if !q.golden_facts.is_empty()
            && !q.golden_facts.iter().all(|fact| answer.contains(fact.as_str()))
        {
            flags.push("missing_golden_fact".to_string());
        }
    } else {
        flags.push("no_final_answer".to_string());
    }

    PerQuestion {
        qid: q.qid.clone(),
        level: q.level,
        score,
        search_count: outcome.search_count,
        golden_recall,
        golden_hit: (golden_recall - 1.0).abs() < f64::EPSILON,
        termination: outcome.termination,
        flags,
        drift_mean: outcome.drift_mean,
        stage_trace: outcome.stage_trace,
    }
}

fn run_pipeline(
    q: &Question,
    pipeline: Pipeline,
    setup: &EvalSetup<'_>,
    backend: &dyn ChatBackend,
) -> PipelineOutcome {
    let failure = |err: String| PipelineOutcome {
        evidence: Vec::new(),
        answer: None,
        search_count: 0,
        termination: "error".to_string(),
        flags: vec![format!("pipeline_error: {err}")],
        drift_mean: None,
        stage_trace: None,
    };

    match pipeline {
        Pipeline::BasicTop5 => {
            let hits = match setup.index.search(&q.question, 5) {
                Ok(h) => h,
                Err(e) => return failure(e.to_string()),
            };
            let evidence: Vec<String> = hits.iter().map(|h| h.chunk_id.clone()).collect();
            let chunks: Vec<(String, String)> =
                hits.iter().map(|h| (h.chunk_id.clone(), h.chunk.text.clone())).collect();
            match answer_from_chunks(&q.question, chunks, backend) {
                Ok(answer) => PipelineOutcome {
                    evidence,
                    answer: Some(answer),
                    search_count: 1,
                    termination: "answered".to_string(),
                    flags: Vec::new(),
                    drift_mean: None,
                    stage_trace: None,
                },
                Err(e) => failure(e.to_string()),
            }
        }
        Pipeline::Oneshot => {
            match run_oneshot(
                &q.question,
                setup.index,
                setup.corpus,
                setup.gazetteer,
                &setup.budget,
                &setup.filter_rules,
                &setup.stages,
                backend,
            ) {
                Ok(record) => PipelineOutcome {
                    evidence: record.stage_trace.final_stage.chunk_ids.clone(),
                    answer: Some(record.answer),
                    search_count: 1,
                    termination: "answered".to_string(),
                    flags: Vec::new(),
                    drift_mean: None,
                    stage_trace: Some(record.stage_trace),
                },
                Err(e) => failure(e.to_string()),
            }
        }
        Pipeline::Iterative | Pipeline::Combined => {
            let run = match pipeline {
                Pipeline::Iterative => run_iterative,
                _ => run_combined,
            };
            match run(&q.question, setup.index, backend, setup.corpus.tokenizer(), &setup.agent) {
                Ok(transcript) => transcript_outcome(q, transcript),
                Err(e) => failure(e.to_string()),
            }
        }
    }
}

fn transcript_outcome(q: &Question, t: Transcript) -> PipelineOutcome {
    let evidence = t.turns.last().map(|turn| turn.working_set_after.clone()).unwrap_or_default();
    let mut flags = Vec::new();
    if t.fallback_executed {
        flags.push("fallback_executed".to_string());
    }
    let deleted_golden = t.turns.iter().any(|turn| {
        turn.tool_results.iter().any(|r| match r {
            ToolResult::Delete { deleted, .. } => {
                deleted.iter().any(|id| q.golden_chunk_ids.contains(id))
            }
            _ => false,
        })
    });
    if deleted_golden {
        flags.push("useful_chunk_deleted".to_string());
    }
    let drift_mean = if t.drift_scores.is_empty() {
        None
    } else {
        Some(t.drift_scores.iter().sum::<f64>() / t.drift_scores.len() as f64)
    };
    let termination = match t.termination {
        Termination::Answered => "answered",
        Termination::MaxTurnsExhausted => "max_turns_exhausted",
        Termination::BackendError => "backend_error",
    };
    PipelineOutcome {
        evidence,
        answer: t.final_answer,
        search_count: t.search_count,
        termination: termination.to_string(),
        flags,
        drift_mean,
        stage_trace: None,
    }
}

/// Writes `report.json` and `report.md` into `dir` and returns both paths.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<(PathBuf, PathBuf), EvalError> {
    fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
    let json_path = dir.join("report.json");
    let body = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&json_path, body + "\n").map_err(|e| EvalError::io(&json_path, e))?;
    let md_path = dir.join("report.md");
    fs::write(&md_path, report_markdown(report)).map_err(|e| EvalError::io(&md_path, e))?;
    Ok((json_path, md_path))
}

fn format_row(label: &str, agg: &LevelAggregate) -> String {
    let score = agg
        .mean_score
        .map(|s| format!("{s:.1}"))
        .unwrap_or_else(|| "-".to_string());
    format!(
        "| {label} | {} | {score} | {:.2} | {:.3} |\n",
        agg.n, agg.mean_search_count, agg.golden_recall
    )
}

fn report_markdown(report: &RunReport) -> String {
    let mut out = String::new();
    out.push_str("# Benchmark report\n\n");
    out.push_str(&format!("pipeline: {}\n", report.pipeline));
    out.push_str(&format!("judge: {}\n\n", report.judge));
    out.push_str("| level | n | mean score | mean searches | golden recall |\n");
    out.push_str("|---|---|---|---|---|\n");
    for (level, agg) in &report.per_level {
        out.push_str(&format_row(&format!("L{level}"), agg));
    }
    out.push_str(&format_row("overall", &report.overall));
    let flagged: Vec<&PerQuestion> =
        report.per_question.iter().filter(|q| !q.flags.is_empty()).collect();
    if !flagged.is_empty() {
        out.push_str("\n## Flags\n\n");
        for q in flagged {
            out.push_str(&format!("- {}: {}\n", q.qid, q.flags.join(", ")));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionRow {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<StageRatio>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<StageRatio>,
    pub final_stage: StageRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionReport {
    pub per_level: BTreeMap<u8, RetentionRow>,
}

/// Mean retention per stage per level over oneshot traces. A stage column
/// is present only where at least one trace ran that stage.
pub fn retention_report(traces: &[(u8, &StageTrace)]) -> RetentionReport {
    let mut per_level = BTreeMap::new();
    let mut levels: Vec<u8> = traces.iter().map(|(l, _)| *l).collect();
    levels.sort_unstable();
    levels.dedup();
    for level in levels {
        let ratios: Vec<_> = traces
            .iter()
            .filter(|(l, _)| *l == level)
            .map(|(_, t)| retention_ratio(t))
            .collect();
        let mean_stage = |values: Vec<StageRatio>| -> Option<StageRatio> {
            if values.is_empty() {
                return None;
            }
            let n = values.len() as f64;
            Some(StageRatio {
                chunks: values.iter().map(|r| r.chunks).sum::<f64>() / n,
                tokens: values.iter().map(|r| r.tokens).sum::<f64>() / n,
            })
        };
        let row = RetentionRow {
            n: ratios.len(),
            filter: mean_stage(ratios.iter().filter_map(|r| r.filter).collect()),
            crop: mean_stage(ratios.iter().filter_map(|r| r.crop).collect()),
            final_stage: mean_stage(ratios.iter().map(|r| r.final_stage).collect())
                .expect("level has at least one trace"),
        };
        per_level.insert(level, row);
    }
    RetentionReport { per_level }
}

impl RetentionReport {
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("| level | n | filter chunks | filter tokens | crop chunks | crop tokens | final chunks | final tokens |\n");
        out.push_str("|---|---|---|---|---|---|---|---|\n");
        let cell = |r: Option<StageRatio>, f: fn(StageRatio) -> f64| {
            r.map(|v| format!("{:.3}", f(v))).unwrap_or_else(|| "-".to_string())
        };
        for (level, row) in &self.per_level {
            out.push_str(&format!(
                "| L{level} | {} | {} | {} | {} | {} | {:.3} | {:.3} |\n",
                row.n,
                cell(row.filter, |r| r.chunks),
                cell(row.filter, |r| r.tokens),
                cell(row.crop, |r| r.chunks),
                cell(row.crop, |r| r.tokens),
                row.final_stage.chunks,
                row.final_stage.tokens,
            ));
        }
        out
    }
}
