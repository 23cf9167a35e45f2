//! Corpus ingestion and storage.
//!
//! Documents are chunked once at ingest time; the resulting store is an
//! ordered, content-addressed snapshot that the index and every pipeline
//! build on. Chunk ids sort by document id then ordinal, and every
//! serialization path uses sorted keys, so a given corpus always produces
//! byte-identical files.

mod chunker;
mod meta;
mod tokenizer;

pub use chunker::{chunk_document, chunk_id, BoundaryMode, ChunkingConfig};
pub(crate) use chunker::sentence_spans;
pub use meta::{extract_metadata, ChunkMeta, Gazetteer};
pub use tokenizer::{
    count_tokens, count_unicode_words, word_tokens, TokenizerConfig, TokenizerError,
    TokenizerMode,
};

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json in {path}: {message}")]
    Json { path: String, message: String },
    #[error("invalid corpus config: {0}")]
    ConfigInvalid(String),
    #[error("document id {0:?} is empty or contains '#'")]
    BadDocId(String),
    #[error("duplicate document id {0}")]
    DuplicateDocId(String),
    #[error("corpus integrity violation: {0}")]
    Integrity(String),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    fn json(path: &Path, err: impl std::fmt::Display) -> Self {
        Self::Json { path: path.display().to_string(), message: err.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub ordinal: usize,
    pub text: String,
    pub token_count: usize,
    /// Unicode scalar offsets into the document body; `text` equals the body
    /// slice at this span.
    pub char_span: (usize, usize),
    #[serde(default)]
    pub meta: ChunkMeta,
}

/// Slices `body` by Unicode scalar offsets.
pub fn slice_by_chars(body: &str, span: (usize, usize)) -> &str {
    if span.1 <= span.0 {
        return "";
    }
    let mut iter = body.char_indices();
    let start = iter
        .by_ref()
        .nth(span.0)
        .map(|(b, _)| b)
        .unwrap_or(body.len());
    let end = iter
        .nth(span.1 - span.0 - 1)
        .map(|(b, _)| b)
        .unwrap_or(body.len());
    &body[start..end]
}

const STORE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    chunking: ChunkingConfig,
    tokenizer: TokenizerConfig,
    corpus_hash: String,
    doc_count: usize,
    chunk_count: usize,
}

/// An ingested corpus: documents, their chunks in id order, and the configs
/// that produced them.
#[derive(Debug, Clone)]
pub struct CorpusStore {
    docs: BTreeMap<String, Document>,
    chunks: Vec<Chunk>,
    by_id: BTreeMap<String, usize>,
    chunking: ChunkingConfig,
    tokenizer: TokenizerConfig,
    corpus_hash: String,
}

impl CorpusStore {
    pub fn ingest_documents(
        documents: Vec<Document>,
        chunking: &ChunkingConfig,
        tokenizer: &TokenizerConfig,
        gaz: &Gazetteer,
    ) -> Result<Self, CorpusError> {
        chunking.validate()?;
        tokenizer.validate()?;
        let mut docs = BTreeMap::new();
        for doc in documents {
            if doc.doc_id.is_empty() || doc.doc_id.contains('#') {
                return Err(CorpusError::BadDocId(doc.doc_id));
            }
            if docs.insert(doc.doc_id.clone(), doc.clone()).is_some() {
                return Err(CorpusError::DuplicateDocId(doc.doc_id));
            }
        }
        let mut chunks = Vec::new();
        for doc in docs.values() {
            chunks.extend(chunk_document(doc, chunking, tokenizer, gaz)?);
        }
        let corpus_hash = hash_docs(&docs);
        let by_id = index_chunks(&chunks)?;
        Ok(Self {
            docs,
            chunks,
            by_id,
            chunking: chunking.clone(),
            tokenizer: tokenizer.clone(),
            corpus_hash,
        })
    }

    pub fn docs(&self) -> impl Iterator<Item = &Document> {
        self.docs.values()
    }

    pub fn doc(&self, doc_id: &str) -> Option<&Document> {
        self.docs.get(doc_id)
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    /// All chunks, sorted by chunk id.
    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.by_id.get(chunk_id).map(|&i| &self.chunks[i])
    }

    pub fn chunk_count(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunking(&self) -> &ChunkingConfig {
        &self.chunking
    }

    pub fn tokenizer(&self) -> &TokenizerConfig {
        &self.tokenizer
    }

    /// Sha-256 over document ids and bodies in id order.
    pub fn corpus_hash(&self) -> &str {
        &self.corpus_hash
    }

    /// The chunks immediately before and after the given one in its document.
    pub fn neighbors(&self, chunk_id: &str) -> Vec<&Chunk> {
        let Some(chunk) = self.chunk(chunk_id) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        if chunk.ordinal > 0 {
            if let Some(prev) = self.chunk(&chunker::chunk_id(&chunk.doc_id, chunk.ordinal - 1)) {
                out.push(prev);
            }
        }
        if let Some(next) = self.chunk(&chunker::chunk_id(&chunk.doc_id, chunk.ordinal + 1)) {
            out.push(next);
        }
        out
    }

    /// All chunks of one document, in ordinal order.
    pub fn doc_chunks<'a>(&'a self, doc_id: &'a str) -> impl Iterator<Item = &'a Chunk> + 'a {
        self.chunks.iter().filter(move |c| c.doc_id == doc_id)
    }

    pub fn save(&self, dir: &Path) -> Result<(), CorpusError> {
        fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
        let manifest = Manifest {
            version: STORE_VERSION,
            chunking: self.chunking.clone(),
            tokenizer: self.tokenizer.clone(),
            corpus_hash: self.corpus_hash.clone(),
            doc_count: self.docs.len(),
            chunk_count: self.chunks.len(),
        };
        let manifest_path = dir.join("manifest.json");
        let body = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CorpusError::json(&manifest_path, e))?;
        fs::write(&manifest_path, body + "\n").map_err(|e| CorpusError::io(&manifest_path, e))?;

        write_jsonl(&dir.join("docs.jsonl"), self.docs.values())?;
        write_jsonl(&dir.join("chunks.jsonl"), self.chunks.iter())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        let manifest_path = dir.join("manifest.json");
        let raw =
            fs::read_to_string(&manifest_path).map_err(|e| CorpusError::io(&manifest_path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&raw).map_err(|e| CorpusError::json(&manifest_path, e))?;
        if manifest.version != STORE_VERSION {
            return Err(CorpusError::Integrity(format!(
                "unsupported store version {} (expected {})",
                manifest.version, STORE_VERSION
            )));
        }

        let mut docs = BTreeMap::new();
        for doc in read_jsonl::<Document>(&dir.join("docs.jsonl"))? {
            if docs.insert(doc.doc_id.clone(), doc.clone()).is_some() {
                return Err(CorpusError::DuplicateDocId(doc.doc_id));
            }
        }
        let chunks: Vec<Chunk> = read_jsonl(&dir.join("chunks.jsonl"))?;
        let by_id = index_chunks(&chunks)?;
        for chunk in &chunks {
            if !docs.contains_key(&chunk.doc_id) {
                return Err(CorpusError::Integrity(format!(
                    "chunk {} references unknown document {}",
                    chunk.chunk_id, chunk.doc_id
                )));
            }
        }
        if docs.len() != manifest.doc_count || chunks.len() != manifest.chunk_count {
            return Err(CorpusError::Integrity(
                "manifest counts do not match stored records".into(),
            ));
        }
        let corpus_hash = hash_docs(&docs);
        if corpus_hash != manifest.corpus_hash {
            return Err(CorpusError::Integrity(
                "document content does not match the manifest corpus hash".into(),
            ));
        }
        Ok(Self {
            docs,
            chunks,
            by_id,
            chunking: manifest.chunking,
            tokenizer: manifest.tokenizer,
            corpus_hash,
        })
    }
}

fn index_chunks(chunks: &[Chunk]) -> Result<BTreeMap<String, usize>, CorpusError> {
    let mut by_id = BTreeMap::new();
    for (i, chunk) in chunks.iter().enumerate() {
        if by_id.insert(chunk.chunk_id.clone(), i).is_some() {
            return Err(CorpusError::Integrity(format!(
                "duplicate chunk id {}",
                chunk.chunk_id
            )));
        }
    }
    for w in chunks.windows(2) {
        if w[0].chunk_id >= w[1].chunk_id {
            return Err(CorpusError::Integrity(format!(
                "chunks out of order: {} then {}",
                w[0].chunk_id, w[1].chunk_id
            )));
        }
    }
    Ok(by_id)
}

fn hash_docs(docs: &BTreeMap<String, Document>) -> String {
    let mut hasher = Sha256::new();
    for doc in docs.values() {
        hasher.update(doc.doc_id.as_bytes());
        hasher.update([0u8]);
        hasher.update(doc.body.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_jsonl<'a, T, I>(path: &Path, items: I) -> Result<(), CorpusError>
where
    T: Serialize + 'a,
    I: Iterator<Item = &'a T>,
{
    let file = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| CorpusError::json(path, e))?;
        writeln!(out, "{line}").map_err(|e| CorpusError::io(path, e))?;
    }
    out.flush().map_err(|e| CorpusError::io(path, e))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| CorpusError::json(path, format!("line {}: {e}", n + 1)))?;
        out.push(item);
    }
    Ok(out)
}

/// Reads documents from a directory: `.txt` and `.md` files become one
/// document each (id from the file stem, title from the first non-empty
/// line), `.jsonl` files hold one document per line.
pub fn read_documents_from_dir(dir: &Path) -> Result<Vec<Document>, CorpusError> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| CorpusError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .collect();
    paths.sort();

    let mut docs = Vec::new();
    for path in paths {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        match ext {
            "txt" | "md" => {
                let body =
                    fs::read_to_string(&path).map_err(|e| CorpusError::io(&path, e))?;
                let doc_id = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_string();
                let title = body
                    .lines()
                    .map(str::trim)
                    .find(|l| !l.is_empty())
                    .unwrap_or(&doc_id)
                    .chars()
                    .take(120)
                    .collect();
                docs.push(Document {
                    doc_id,
                    title,
                    body,
                    source: Some(path.display().to_string()),
                });
            }
            "jsonl" => docs.extend(read_jsonl::<Document>(&path)?),
            _ => {}
        }
    }
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(docs)
}
