//! Command line front end: ingest, ask, eval, laziness.
//!
//! Exit codes: 0 success, 2 usage or config, 3 backend, 4 data integrity.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use dragnet_core::agent::{self, AgentError, FallbackRetriever, Termination};
use dragnet_core::corpus::{self, CorpusError, CorpusStore, Gazetteer};
use dragnet_core::eval::{
    self, laziness_experiment, load_questions, run_benchmark, write_laziness_csv, write_report,
    EvalError, EvalSetup, JudgeSetup, LazinessConfig, LazinessMode, PaddingSource, Pipeline,
    Question,
};
use dragnet_core::index::{build_index, Index, IndexError};
use dragnet_core::llm::{make_backend, ChatBackend, LlmError};
use dragnet_core::oneshot::{answer_from_chunks, run_oneshot, OneshotError};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "dragnet",
    version,
    about = "Budgeted retrieval pipelines over a chunked document corpus"
)]
struct Cli {
    /// Run configuration file, .toml or .json
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Corpus store directory
    #[arg(long, global = true, value_name = "DIR")]
    corpus_dir: Option<PathBuf>,

    /// Index store directory
    #[arg(long, global = true, value_name = "DIR")]
    index_dir: Option<PathBuf>,

    /// Context budget ceiling in tokens
    #[arg(long, global = true, value_name = "N")]
    budget_tokens: Option<usize>,

    /// Tokens held back from the budget for the answer
    #[arg(long, global = true, value_name = "N")]
    reserve_tokens: Option<usize>,

    /// Reply script for the main backend; switches it to scripted
    #[arg(long, global = true, value_name = "FILE")]
    script: Option<String>,

    /// Chat endpoint for the main backend; switches it to wire
    #[arg(long, global = true, value_name = "URL")]
    endpoint: Option<String>,

    /// Model name sent to a wire backend
    #[arg(long, global = true, value_name = "NAME")]
    model: Option<String>,

    /// Reply script for the judge backend; switches it to scripted
    #[arg(long, global = true, value_name = "FILE")]
    judge_script: Option<String>,

    /// Turn cap for the iterative agent
    #[arg(long, global = true, value_name = "N")]
    max_turns: Option<usize>,

    /// Results returned per agent search call
    #[arg(long, global = true, value_name = "N")]
    k_per_search: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Chunk documents from a directory and build both stores
    Ingest {
        /// Directory of .txt, .md, or .jsonl documents
        input: PathBuf,
    },
    /// Answer one question against the saved stores
    Ask {
        question: String,
        #[arg(long, value_enum, default_value_t = PipelineArg::Oneshot)]
        pipeline: PipelineArg,
        /// Write the run trace or transcript to this file
        #[arg(long, value_name = "FILE")]
        trace: Option<PathBuf>,
    },
    /// Run a question file through one pipeline and write a report
    Eval {
        /// JSONL question file
        questions: PathBuf,
        #[arg(long, value_enum, default_value_t = PipelineArg::Iterative)]
        pipeline: PipelineArg,
        /// Directory for report.json and report.md
        #[arg(long, default_value = "eval-out", value_name = "DIR")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = JudgeArg::Lexical)]
        judge: JudgeArg,
    },
    /// Measure follow-up search probability against context length
    Laziness {
        /// Probe question to pad
        question: String,
        /// Directory for laziness.csv
        #[arg(long, default_value = "laziness-out", value_name = "DIR")]
        out: PathBuf,
        /// Comma-separated context token targets
        #[arg(long, value_delimiter = ',', value_name = "N,N,...")]
        lengths: Option<Vec<usize>>,
        /// Trials per target length
        #[arg(long, value_name = "N")]
        trials: Option<usize>,
        #[arg(long, value_enum, default_value_t = PaddingArg::Synthetic)]
        padding: PaddingArg,
        /// Sample the configured backend instead of the reference policy
        #[arg(long)]
        wire: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PipelineArg {
    Basic,
    Oneshot,
    Iterative,
    Combined,
}

impl From<PipelineArg> for Pipeline {
    fn from(p: PipelineArg) -> Self {
        match p {
            PipelineArg::Basic => Pipeline::BasicTop5,
            PipelineArg::Oneshot => Pipeline::Oneshot,
            PipelineArg::Iterative => Pipeline::Iterative,
            PipelineArg::Combined => Pipeline::Combined,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum JudgeArg {
    Lexical,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PaddingArg {
    Synthetic,
    Corpus,
}

/// A failed command, already classified into its exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Backend(String),
    Data(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Backend(_) => 3,
            Failure::Data(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Backend(m) | Failure::Data(m) => m,
        }
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { .. } | CorpusError::ConfigInvalid(_) | CorpusError::Tokenizer(_) => {
                Failure::Usage(e.to_string())
            }
            CorpusError::Json { .. }
            | CorpusError::BadDocId(_)
            | CorpusError::DuplicateDocId(_)
            | CorpusError::Integrity(_) => Failure::Data(e.to_string()),
        }
    }
}

impl From<IndexError> for Failure {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::EmptyQuery | IndexError::ConfigInvalid(_) | IndexError::Io { .. } => {
                Failure::Usage(e.to_string())
            }
            IndexError::EmbedderUnavailable(_) => Failure::Backend(e.to_string()),
            IndexError::EmptyText
            | IndexError::UnembeddableChunk(_)
            | IndexError::EmptyCorpus
            | IndexError::StaleIndex { .. }
            | IndexError::Data { .. } => Failure::Data(e.to_string()),
        }
    }
}

impl From<LlmError> for Failure {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::BackendUnavailable(_)
            | LlmError::BackendProtocolError(_)
            | LlmError::JudgeParseError(_) => Failure::Backend(e.to_string()),
            LlmError::ConfigInvalid(_)
            | LlmError::InvalidRequest(_)
            | LlmError::ScriptError(_)
            | LlmError::Io { .. } => Failure::Usage(e.to_string()),
        }
    }
}

impl From<AgentError> for Failure {
    fn from(e: AgentError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<OneshotError> for Failure {
    fn from(e: OneshotError) -> Self {
        match e {
            OneshotError::InstanceTooLarge(_) | OneshotError::ConfigInvalid(_) => {
                Failure::Usage(e.to_string())
            }
            OneshotError::Index(inner) => inner.into(),
            OneshotError::Llm(inner) => inner.into(),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::QuestionSchema { .. }
            | EvalError::ConfigInvalid(_)
            | EvalError::PaddingExhausted { .. }
            | EvalError::Io { .. } => Failure::Usage(e.to_string()),
            EvalError::UnresolvedGolden(_) => Failure::Data(e.to_string()),
            EvalError::Backend { .. } => Failure::Backend(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().after_help(config::reference()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(path) => config::load_file(path).map_err(Failure::Usage)?,
        None => RunConfig::default(),
    };
    apply_flags(&mut cfg, &cli);
    config::apply_env(&mut cfg, &|name| std::env::var(name).ok()).map_err(Failure::Usage)?;

    match cli.cmd {
        Cmd::Ingest { input } => cmd_ingest(&cfg, &input),
        Cmd::Ask { question, pipeline, trace } => {
            cmd_ask(&cfg, &question, pipeline, trace.as_deref())
        }
        Cmd::Eval { questions, pipeline, out, judge } => {
            cmd_eval(&cfg, &questions, pipeline, &out, judge)
        }
        Cmd::Laziness { question, out, lengths, trials, padding, wire } => {
            cmd_laziness(&cfg, &question, &out, lengths, trials, padding, wire)
        }
    }
}

fn apply_flags(cfg: &mut RunConfig, cli: &Cli) {
    if let Some(v) = &cli.corpus_dir {
        cfg.corpus_dir = v.clone();
    }
    if let Some(v) = &cli.index_dir {
        cfg.index_dir = v.clone();
    }
    if let Some(v) = cli.budget_tokens {
        cfg.budget.max_tokens = v;
    }
    if let Some(v) = cli.reserve_tokens {
        cfg.budget.reserve_tokens = v;
    }
    if let Some(v) = &cli.script {
        config::set_scripted(&mut cfg.backend, v.clone());
    }
    if let Some(v) = &cli.endpoint {
        config::set_wire(&mut cfg.backend, v.clone());
    }
    if let Some(v) = &cli.model {
        cfg.backend.model_name = Some(v.clone());
    }
    if let Some(v) = &cli.judge_script {
        config::set_scripted(&mut cfg.judge, v.clone());
    }
    if let Some(v) = cli.max_turns {
        cfg.agent.max_turns = v;
    }
    if let Some(v) = cli.k_per_search {
        cfg.agent.k_per_search = v;
    }
}

fn load_stores(cfg: &RunConfig) -> Result<(CorpusStore, Index), Failure> {
    let corpus = CorpusStore::load(&cfg.corpus_dir)?;
    let index = Index::load(&cfg.index_dir, &corpus)?;
    Ok((corpus, index))
}

/// The agent config a pipeline actually runs with: combined mode forces the
/// token-constrained fallback and inherits the run budget unless the config
/// pinned its own.
fn agent_for(cfg: &RunConfig, pipeline: Pipeline) -> dragnet_core::agent::AgentConfig {
    let mut agent = cfg.agent.clone();
    if pipeline == Pipeline::Combined {
        agent.fallback_retriever = FallbackRetriever::TokenConstrained;
        if agent.fallback_budget.is_none() {
            agent.fallback_budget = Some(cfg.budget);
        }
    }
    agent
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let body = serde_json::to_string_pretty(value).expect("trace serializes");
    std::fs::write(path, body + "\n")
        .map_err(|e| Failure::Usage(format!("writing {}: {e}", path.display())))
}

fn cmd_ingest(cfg: &RunConfig, input: &Path) -> Result<(), Failure> {
    if !input.is_dir() {
        return Err(Failure::Usage(format!(
            "input directory {} does not exist",
            input.display()
        )));
    }
    let documents = corpus::read_documents_from_dir(input)?;
    let store = CorpusStore::ingest_documents(
        documents,
        &cfg.chunking,
        &cfg.tokenizer,
        &Gazetteer::builtin(),
    )?;
    store.save(&cfg.corpus_dir)?;
    let index = build_index(&store, &cfg.embedder, &cfg.index)?;
    index.save(&cfg.index_dir, &store)?;
    println!("{} documents, {} chunks", store.doc_count(), store.chunk_count());
    println!("corpus hash {}", store.corpus_hash());
    println!("corpus store: {}", cfg.corpus_dir.display());
    println!("index store: {}", cfg.index_dir.display());
    Ok(())
}

fn cmd_ask(
    cfg: &RunConfig,
    question: &str,
    pipeline: PipelineArg,
    trace: Option<&Path>,
) -> Result<(), Failure> {
    let (corpus, index) = load_stores(cfg)?;
    let backend = make_backend(&cfg.backend)?;
    match pipeline {
        PipelineArg::Basic => ask_basic(cfg, question, &index, &*backend, trace),
        PipelineArg::Oneshot => ask_oneshot(cfg, question, &corpus, &index, &*backend, trace),
        PipelineArg::Iterative | PipelineArg::Combined => {
            ask_agentic(cfg, question, &index, &*backend, pipeline, trace)
        }
    }
}

fn ask_basic(
    cfg: &RunConfig,
    question: &str,
    index: &Index,
    backend: &dyn ChatBackend,
    trace: Option<&Path>,
) -> Result<(), Failure> {
    let hits = index.search(question, cfg.index.k_default)?;
    let evidence: Vec<(String, String)> = hits
        .iter()
        .map(|s| (s.chunk.chunk_id.clone(), s.chunk.text.clone()))
        .collect();
    let ids: Vec<&str> = evidence.iter().map(|(id, _)| id.as_str()).collect();
    let partial = serde_json::json!({
        "pipeline": "basic_top5",
        "question": question,
        "evidence_chunk_ids": ids,
        "answer": null,
    });
    if let Some(path) = trace {
        write_json(path, &partial)?;
    }
    let answer = answer_from_chunks(question, evidence, backend).map_err(Failure::from)?;
    if let Some(path) = trace {
        let mut full = partial;
        full["answer"] = serde_json::Value::String(answer.clone());
        write_json(path, &full)?;
        println!("trace: {}", path.display());
    }
    println!("{answer}");
    Ok(())
}

fn ask_oneshot(
    cfg: &RunConfig,
    question: &str,
    corpus: &CorpusStore,
    index: &Index,
    backend: &dyn ChatBackend,
    trace: Option<&Path>,
) -> Result<(), Failure> {
    match run_oneshot(
        question,
        index,
        corpus,
        &Gazetteer::builtin(),
        &cfg.budget,
        &cfg.filter,
        &cfg.stages,
        backend,
    ) {
        Ok(record) => {
            if let Some(path) = trace {
                let value = serde_json::to_value(&record).expect("record serializes");
                write_json(path, &value)?;
                println!("trace: {}", path.display());
            }
            println!("{}", record.answer);
            Ok(())
        }
        Err(e) => {
            if let Some(path) = trace {
                let partial = serde_json::json!({
                    "pipeline": "oneshot",
                    "question": question,
                    "error": e.to_string(),
                });
                write_json(path, &partial)?;
                println!("trace: {}", path.display());
            }
            Err(e.into())
        }
    }
}

fn ask_agentic(
    cfg: &RunConfig,
    question: &str,
    index: &Index,
    backend: &dyn ChatBackend,
    pipeline: PipelineArg,
    trace: Option<&Path>,
) -> Result<(), Failure> {
    let agent_cfg = agent_for(cfg, pipeline.into());
    let transcript = if pipeline == PipelineArg::Combined {
        agent::run_combined(question, index, backend, &cfg.tokenizer, &agent_cfg)?
    } else {
        agent::run_iterative(question, index, backend, &cfg.tokenizer, &agent_cfg)?
    };
    if let Some(path) = trace {
        agent::write_transcript(&transcript, path)?;
        println!("trace: {}", path.display());
    }
    match &transcript.final_answer {
        Some(answer) => println!("{answer}"),
        None => println!("(no final answer)"),
    }
    if transcript.termination == Termination::BackendError {
        return Err(Failure::Backend(
            "backend failed mid-episode; transcript holds the partial run".into(),
        ));
    }
    Ok(())
}

fn cmd_eval(
    cfg: &RunConfig,
    questions_path: &Path,
    pipeline: PipelineArg,
    out: &Path,
    judge: JudgeArg,
) -> Result<(), Failure> {
    let (corpus, index) = load_stores(cfg)?;
    let questions = load_questions(questions_path, &corpus)?;
    let backend = make_backend(&cfg.backend)?;
    let judge_backend = match judge {
        JudgeArg::Lexical => None,
        JudgeArg::Model => Some(make_backend(&cfg.judge)?),
    };
    let judge_setup = match &judge_backend {
        None => JudgeSetup::Lexical,
        Some(b) => JudgeSetup::Backend(&**b),
    };

    let pipeline = Pipeline::from(pipeline);
    let gazetteer = Gazetteer::builtin();
    let setup = EvalSetup {
        corpus: &corpus,
        index: &index,
        gazetteer: &gazetteer,
        budget: cfg.budget,
        filter_rules: cfg.filter.clone(),
        stages: cfg.stages,
        agent: agent_for(cfg, pipeline),
        max_in_flight: cfg.backend.max_in_flight,
    };
    let report = run_benchmark(&questions, pipeline, &setup, &*backend, &judge_setup)?;
    let (json_path, md_path) = write_report(&report, out)?;

    for (level, agg) in &report.per_level {
        let score = agg
            .mean_score
            .map(|s| format!("{s:.1}"))
            .unwrap_or_else(|| "-".to_string());
        println!(
            "L{level}: n={} score={score} recall={:.3} searches={:.2}",
            agg.n, agg.golden_recall, agg.mean_search_count
        );
    }
    let overall = &report.overall;
    println!(
        "overall: n={} scored={} recall={:.3}",
        overall.n, overall.scored, overall.golden_recall
    );
    println!("report: {}", json_path.display());
    println!("report: {}", md_path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_laziness(
    cfg: &RunConfig,
    question: &str,
    out: &Path,
    lengths: Option<Vec<usize>>,
    trials: Option<usize>,
    padding: PaddingArg,
    wire: bool,
) -> Result<(), Failure> {
    let (corpus, index) = load_stores(cfg)?;
    let mut laziness_cfg = LazinessConfig::default();
    if let Some(lengths) = lengths {
        laziness_cfg.context_lengths = lengths;
    }
    if let Some(trials) = trials {
        laziness_cfg.trials_per_length = trials;
    }
    laziness_cfg.padding_source = match padding {
        PaddingArg::Synthetic => PaddingSource::Synthetic,
        PaddingArg::Corpus => PaddingSource::CorpusIrrelevant,
    };

    let probe = Question {
        qid: "probe".into(),
        level: 1,
        question: question.to_string(),
        reference_answer: String::new(),
        golden_chunk_ids: Vec::new(),
        golden_facts: Vec::new(),
    };
    let backend = if wire { Some(make_backend(&cfg.backend)?) } else { None };
    let mode = match &backend {
        Some(b) => LazinessMode::Wire(&**b),
        None => LazinessMode::ScriptedPolicy,
    };
    let points = laziness_experiment(
        &probe,
        &laziness_cfg,
        &cfg.agent,
        &corpus,
        &index,
        &Gazetteer::builtin(),
        &mode,
    )?;

    std::fs::create_dir_all(out)
        .map_err(|e| Failure::Usage(format!("creating {}: {e}", out.display())))?;
    let csv_path = out.join("laziness.csv");
    write_laziness_csv(&points, &csv_path)?;
    for p in &points {
        println!(
            "{} tokens: p(follow-up) = {:.3} over {} trials",
            p.context_tokens, p.follow_up_probability, p.trials
        );
    }
    println!("csv: {}", csv_path.display());
    Ok(())
}
