//! Layered run configuration.
//!
//! Defaults, then the config file, then command line flags, then RAG_
//! environment variables; each layer overrides the one before it. The file
//! is TOML or JSON, picked by extension, and mirrors [`RunConfig`] directly.

use std::fs;
use std::path::{Path, PathBuf};

use dragnet_core::agent::AgentConfig;
use dragnet_core::corpus::{ChunkingConfig, TokenizerConfig};
use dragnet_core::index::{EmbedderConfig, IndexConfig};
use dragnet_core::llm::{BackendConfig, BackendKind};
use dragnet_core::oneshot::{Budget, FilterRules, Stages};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub corpus_dir: PathBuf,
    pub index_dir: PathBuf,
    pub tokenizer: TokenizerConfig,
    pub chunking: ChunkingConfig,
    pub embedder: EmbedderConfig,
    pub index: IndexConfig,
    pub budget: Budget,
    pub filter: FilterRules,
    pub stages: Stages,
    pub agent: AgentConfig,
    pub backend: BackendConfig,
    pub judge: BackendConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus_dir: PathBuf::from("corpus_store"),
            index_dir: PathBuf::from("index_store"),
            tokenizer: TokenizerConfig::default(),
            chunking: ChunkingConfig::default(),
            embedder: EmbedderConfig::default(),
            index: IndexConfig::default(),
            budget: Budget::default(),
            filter: FilterRules::default(),
            stages: Stages { filter: true, crop: false },
            agent: AgentConfig::default(),
            backend: BackendConfig::default(),
            judge: BackendConfig::default(),
        }
    }
}

pub fn load_file(path: &Path) -> Result<RunConfig, String> {
    let fail = |e: &dyn std::fmt::Display| format!("config file {}: {e}", path.display());
    let raw = fs::read_to_string(path).map_err(|e| fail(&e))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&raw).map_err(|e| fail(&e)),
        Some("json") => serde_json::from_str(&raw).map_err(|e| fail(&e)),
        other => Err(format!(
            "config file {}: unsupported extension {:?}, use .toml or .json",
            path.display(),
            other.unwrap_or("")
        )),
    }
}

/// Environment overrides, applied last. Setting a script switches that
/// backend to scripted; setting an endpoint switches it to wire.
pub const ENV_OVERRIDES: &[(&str, &str)] = &[
    ("RAG_CORPUS_DIR", "corpus_dir"),
    ("RAG_INDEX_DIR", "index_dir"),
    ("RAG_BUDGET_MAX_TOKENS", "budget.max_tokens"),
    ("RAG_BUDGET_RESERVE_TOKENS", "budget.reserve_tokens"),
    ("RAG_AGENT_MAX_TURNS", "agent.max_turns"),
    ("RAG_AGENT_K_PER_SEARCH", "agent.k_per_search"),
    ("RAG_BACKEND_SCRIPT", "backend.script_path, backend.kind = scripted"),
    ("RAG_BACKEND_ENDPOINT", "backend.endpoint, backend.kind = wire"),
    ("RAG_BACKEND_MODEL", "backend.model_name"),
    ("RAG_BACKEND_TEMPERATURE", "backend.temperature"),
    ("RAG_JUDGE_SCRIPT", "judge.script_path, judge.kind = scripted"),
    ("RAG_JUDGE_ENDPOINT", "judge.endpoint, judge.kind = wire"),
    ("RAG_JUDGE_MODEL", "judge.model_name"),
];

pub fn apply_env(
    cfg: &mut RunConfig,
    get: &dyn Fn(&str) -> Option<String>,
) -> Result<(), String> {
    fn number<T: std::str::FromStr>(name: &str, raw: &str) -> Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        raw.parse().map_err(|e| format!("{name}={raw:?}: {e}"))
    }

    if let Some(v) = get("RAG_CORPUS_DIR") {
        cfg.corpus_dir = PathBuf::from(v);
    }
    if let Some(v) = get("RAG_INDEX_DIR") {
        cfg.index_dir = PathBuf::from(v);
    }
    if let Some(v) = get("RAG_BUDGET_MAX_TOKENS") {
        cfg.budget.max_tokens = number("RAG_BUDGET_MAX_TOKENS", &v)?;
    }
    if let Some(v) = get("RAG_BUDGET_RESERVE_TOKENS") {
        cfg.budget.reserve_tokens = number("RAG_BUDGET_RESERVE_TOKENS", &v)?;
    }
    if let Some(v) = get("RAG_AGENT_MAX_TURNS") {
        cfg.agent.max_turns = number("RAG_AGENT_MAX_TURNS", &v)?;
    }
    if let Some(v) = get("RAG_AGENT_K_PER_SEARCH") {
        cfg.agent.k_per_search = number("RAG_AGENT_K_PER_SEARCH", &v)?;
    }
    if let Some(v) = get("RAG_BACKEND_SCRIPT") {
        set_scripted(&mut cfg.backend, v);
    }
    if let Some(v) = get("RAG_BACKEND_ENDPOINT") {
        set_wire(&mut cfg.backend, v);
    }
    if let Some(v) = get("RAG_BACKEND_MODEL") {
        cfg.backend.model_name = Some(v);
    }
    if let Some(v) = get("RAG_BACKEND_TEMPERATURE") {
        cfg.backend.temperature = number("RAG_BACKEND_TEMPERATURE", &v)?;
    }
    if let Some(v) = get("RAG_JUDGE_SCRIPT") {
        set_scripted(&mut cfg.judge, v);
    }
    if let Some(v) = get("RAG_JUDGE_ENDPOINT") {
        set_wire(&mut cfg.judge, v);
    }
    if let Some(v) = get("RAG_JUDGE_MODEL") {
        cfg.judge.model_name = Some(v);
    }
    Ok(())
}

pub fn set_scripted(backend: &mut BackendConfig, script_path: String) {
    backend.kind = BackendKind::Scripted;
    backend.script_path = Some(script_path);
    backend.endpoint = None;
    backend.model_name = None;
}

pub fn set_wire(backend: &mut BackendConfig, endpoint: String) {
    backend.kind = BackendKind::Wire;
    backend.endpoint = Some(endpoint);
    backend.script_path = None;
}

/// The full config surface with defaults, rendered for `--help`.
pub fn reference() -> String {
    let defaults =
        toml::to_string_pretty(&RunConfig::default()).expect("default config serializes");
    let envs = ENV_OVERRIDES
        .iter()
        .map(|(name, effect)| format!("  {name:<27} {effect}"))
        .collect::<Vec<_>>()
        .join("\n");
    format!(
        "Config file fields with their defaults (TOML; a .json file mirrors the same shape):\n\n\
         {defaults}\n\
         Layering: config file, then flags, then environment; later layers win.\n\
         Environment overrides:\n{envs}"
    )
}
