//! Hybrid search over an ingested corpus.
//!
//! One dense vector and one posting set per chunk. A query gets a BM25 score
//! and a cosine score against every chunk, each is min-max normalized over
//! the whole pool, and the weighted sum ranks the chunks. No approximate
//! structures: at the intended scale an exhaustive scan is fast and exactly
//! reproducible.

mod bm25;
mod embed;

pub use bm25::{idf, Postings};
pub use embed::{cosine, embed, embed_batch, EmbedderConfig, EmbedderMode};

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{word_tokens, Chunk, CorpusStore};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("query has no searchable tokens")]
    EmptyQuery,
    #[error("text has no embeddable tokens")]
    EmptyText,
    #[error("chunk {0} has no embeddable tokens")]
    UnembeddableChunk(String),
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("index was built for corpus {expected}, got corpus {found}")]
    StaleIndex { expected: String, found: String },
    #[error("embedding endpoint unreachable: {0}")]
    EmbedderUnavailable(String),
    #[error("invalid index config: {0}")]
    ConfigInvalid(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed data in {path}: {message}")]
    Data { path: String, message: String },
}

impl IndexError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    fn data(path: &Path, message: impl std::fmt::Display) -> Self {
        Self::Data { path: path.display().to_string(), message: message.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub lexical_weight: f64,
    pub dense_weight: f64,
    pub k_default: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self { lexical_weight: 0.3, dense_weight: 0.7, k_default: 5 }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<(), IndexError> {
        let in_range = |w: f64| (0.0..=1.0).contains(&w);
        if !in_range(self.lexical_weight) || !in_range(self.dense_weight) {
            return Err(IndexError::ConfigInvalid(
                "weights must lie in [0, 1]".into(),
            ));
        }
        if (self.lexical_weight + self.dense_weight - 1.0).abs() > 1e-9 {
            return Err(IndexError::ConfigInvalid(format!(
                "weights must sum to 1, got {}",
                self.lexical_weight + self.dense_weight
            )));
        }
        if self.k_default == 0 {
            return Err(IndexError::ConfigInvalid("k_default must be at least 1".into()));
        }
        Ok(())
    }
}

/// One search hit. Score is the normalized hybrid relevance in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk_id: String,
    pub score: f64,
    pub chunk: Chunk,
}

const INDEX_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct IndexManifest {
    version: u32,
    corpus_hash: String,
    chunk_count: usize,
    embedder: EmbedderConfig,
    config: IndexConfig,
    doc_lens: Vec<u32>,
}

/// Immutable search structures over one corpus snapshot.
#[derive(Debug, Clone)]
pub struct Index {
    chunks: Vec<Chunk>,
    by_id: BTreeMap<String, usize>,
    /// Row-major, one `dim`-wide row of f32 per chunk, unit-normalized.
    vectors: Vec<f32>,
    postings: Postings,
    corpus_hash: String,
    embedder: EmbedderConfig,
    config: IndexConfig,
}

pub fn build_index(
    corpus: &CorpusStore,
    embedder: &EmbedderConfig,
    config: &IndexConfig,
) -> Result<Index, IndexError> {
    embedder.validate()?;
    config.validate()?;
    if corpus.is_empty() {
        return Err(IndexError::EmptyCorpus);
    }
    let chunks: Vec<Chunk> = corpus.chunks().to_vec();
    let token_lists: Vec<Vec<String>> =
        chunks.iter().map(|c| word_tokens(&c.text)).collect();
    for (chunk, tokens) in chunks.iter().zip(&token_lists) {
        if tokens.is_empty() {
            return Err(IndexError::UnembeddableChunk(chunk.chunk_id.clone()));
        }
    }

    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    let embedded = embed_batch(&texts, embedder).map_err(|e| match e {
        IndexError::EmptyText => {
            IndexError::UnembeddableChunk("unknown".into())
        }
        other => other,
    })?;
    let mut vectors = Vec::with_capacity(chunks.len() * embedder.dim);
    for v in &embedded {
        vectors.extend(v.iter().map(|&x| x as f32));
    }

    let postings = Postings::build(&token_lists);
    let by_id = chunks
        .iter()
        .enumerate()
        .map(|(i, c)| (c.chunk_id.clone(), i))
        .collect();
    Ok(Index {
        chunks,
        by_id,
        vectors,
        postings,
        corpus_hash: corpus.corpus_hash().to_string(),
        embedder: embedder.clone(),
        config: config.clone(),
    })
}

impl Index {
    pub fn chunk_count(&self) -> usize {
        self.chunks.len()
    }

    pub fn corpus_hash(&self) -> &str {
        &self.corpus_hash
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn embedder(&self) -> &EmbedderConfig {
        &self.embedder
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.by_id.get(chunk_id).map(|&i| &self.chunks[i])
    }

    /// Embeds a query with this index's embedder.
    pub fn embed_query(&self, query: &str) -> Result<Vec<f64>, IndexError> {
        match embed(query, &self.embedder) {
            Err(IndexError::EmptyText) => Err(IndexError::EmptyQuery),
            other => other,
        }
    }

    /// Scores every chunk against the query and returns the full ranking.
    pub fn search_all(&self, query: &str) -> Result<Vec<ScoredChunk>, IndexError> {
        let query_tokens = word_tokens(query);
        if query_tokens.is_empty() {
            return Err(IndexError::EmptyQuery);
        }
        let qvec = self.embed_query(query)?;
        let n = self.chunks.len();
        let dim = self.embedder.dim;

        let dense_raw: Vec<f64> = (0..n)
            .map(|i| cosine(&self.vectors[i * dim..(i + 1) * dim], &qvec))
            .collect();
        let lexical_raw = self.postings.score_all(&query_tokens);
        let dense = min_max_normalize(&dense_raw);
        let lexical = min_max_normalize(&lexical_raw);

        let mut scored: Vec<ScoredChunk> = (0..n)
            .map(|i| ScoredChunk {
                chunk_id: self.chunks[i].chunk_id.clone(),
                score: self.config.dense_weight * dense[i]
                    + self.config.lexical_weight * lexical[i],
                chunk: self.chunks[i].clone(),
            })
            .collect();
        scored.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("scores are finite")
                .then_with(|| a.chunk_id.cmp(&b.chunk_id))
        });
        Ok(scored)
    }

    /// Top-k ranking; a prefix of `search_all`.
    pub fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredChunk>, IndexError> {
        if k == 0 {
            return Err(IndexError::ConfigInvalid("k must be at least 1".into()));
        }
        let mut all = self.search_all(query)?;
        all.truncate(k);
        Ok(all)
    }

    pub fn save(&self, dir: &Path) -> Result<(), IndexError> {
        fs::create_dir_all(dir).map_err(|e| IndexError::io(dir, e))?;
        let manifest = IndexManifest {
            version: INDEX_VERSION,
            corpus_hash: self.corpus_hash.clone(),
            chunk_count: self.chunks.len(),
            embedder: self.embedder.clone(),
            config: self.config.clone(),
            doc_lens: self.postings.doc_lens().to_vec(),
        };
        let manifest_path = dir.join("index_manifest.json");
        let body = serde_json::to_string_pretty(&manifest)
            .map_err(|e| IndexError::data(&manifest_path, e))?;
        fs::write(&manifest_path, body + "\n").map_err(|e| IndexError::io(&manifest_path, e))?;

        let vectors_path = dir.join("vectors.bin");
        let mut buf = Vec::with_capacity(self.vectors.len() * 4);
        for &x in &self.vectors {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        fs::write(&vectors_path, buf).map_err(|e| IndexError::io(&vectors_path, e))?;

        let postings_path = dir.join("postings.jsonl");
        let file = fs::File::create(&postings_path).map_err(|e| IndexError::io(&postings_path, e))?;
        let mut out = std::io::BufWriter::new(file);
        for line in self.postings.to_lines() {
            let json =
                serde_json::to_string(&line).map_err(|e| IndexError::data(&postings_path, e))?;
            writeln!(out, "{json}").map_err(|e| IndexError::io(&postings_path, e))?;
        }
        out.flush().map_err(|e| IndexError::io(&postings_path, e))?;
        Ok(())
    }

    /// Loads a persisted index and binds it to the given corpus; a hash
    /// mismatch means the index is stale.
    pub fn load(dir: &Path, corpus: &CorpusStore) -> Result<Self, IndexError> {
        let manifest_path = dir.join("index_manifest.json");
        let raw = fs::read_to_string(&manifest_path)
            .map_err(|e| IndexError::io(&manifest_path, e))?;
        let manifest: IndexManifest =
            serde_json::from_str(&raw).map_err(|e| IndexError::data(&manifest_path, e))?;
        if manifest.version != INDEX_VERSION {
            return Err(IndexError::data(
                &manifest_path,
                format!("unsupported index version {}", manifest.version),
            ));
        }
        if manifest.corpus_hash != corpus.corpus_hash() {
            return Err(IndexError::StaleIndex {
                expected: manifest.corpus_hash,
                found: corpus.corpus_hash().to_string(),
            });
        }
        if manifest.chunk_count != corpus.chunk_count()
            || manifest.doc_lens.len() != corpus.chunk_count()
        {
            return Err(IndexError::data(
                &manifest_path,
                "manifest counts do not match the corpus",
            ));
        }

        let vectors_path = dir.join("vectors.bin");
        let file = fs::File::open(&vectors_path).map_err(|e| IndexError::io(&vectors_path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| IndexError::io(&vectors_path, e))?;
        let expected_len = manifest.chunk_count * manifest.embedder.dim * 4;
        if bytes.len() != expected_len {
            return Err(IndexError::data(
                &vectors_path,
                format!("expected {expected_len} bytes, found {}", bytes.len()),
            ));
        }
        let vectors: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();

        let postings_path = dir.join("postings.jsonl");
        let file = fs::File::open(&postings_path).map_err(|e| IndexError::io(&postings_path, e))?;
        let mut lines = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| IndexError::io(&postings_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str(&line)
                .map_err(|e| IndexError::data(&postings_path, format!("line {}: {e}", n + 1)))?;
            lines.push(parsed);
        }
        let postings = Postings::from_lines(lines, manifest.doc_lens);

        let chunks: Vec<Chunk> = corpus.chunks().to_vec();
        let by_id = chunks
            .iter()
            .enumerate()
            .map(|(i, c)| (c.chunk_id.clone(), i))
            .collect();
        Ok(Self {
            chunks,
            by_id,
            vectors,
            postings,
            corpus_hash: corpus.corpus_hash().to_string(),
            embedder: manifest.embedder,
            config: manifest.config,
        })
    }
}

/// Maps scores onto [0, 1]. A flat pool maps to all ones when the shared
/// value is positive and all zeros otherwise, so a single perfect candidate
/// keeps score 1.
fn min_max_normalize(raw: &[f64]) -> Vec<f64> {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max - min < f64::EPSILON {
        let fill = if max > 0.0 { 1.0 } else { 0.0 };
        return vec![fill; raw.len()];
    }
    raw.iter().map(|&x| (x - min) / (max - min)).collect()
}
