//! Lexical scoring over an inverted posting list.
//!
//! Standard BM25 with the non-negative idf variant, so scores never go below
//! zero and a term present in every chunk simply stops mattering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub const K1: f64 = 1.2;
pub const B: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostingLine {
    pub term: String,
    /// Pairs of (chunk index, term frequency).
    pub postings: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, Default)]
pub struct Postings {
    terms: BTreeMap<String, Vec<(u32, u32)>>,
    doc_lens: Vec<u32>,
    avgdl: f64,
}

impl Postings {
    /// Builds the inverted index from one token list per chunk, in chunk
    /// order.
    pub fn build(token_lists: &[Vec<String>]) -> Self {
        let mut terms: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_lens = Vec::with_capacity(token_lists.len());
        for (idx, tokens) in token_lists.iter().enumerate() {
            doc_lens.push(tokens.len() as u32);
            let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
            for t in tokens {
                *counts.entry(t.as_str()).or_insert(0) += 1;
            }
            for (term, tf) in counts {
                terms.entry(term.to_string()).or_default().push((idx as u32, tf));
            }
        }
        let total: u64 = doc_lens.iter().map(|&l| u64::from(l)).sum();
        let avgdl = if doc_lens.is_empty() {
            0.0
        } else {
            total as f64 / doc_lens.len() as f64
        };
        Self { terms, doc_lens, avgdl }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_lens.len()
    }

    pub fn doc_lens(&self) -> &[u32] {
        &self.doc_lens
    }

    /// One BM25 score per chunk; chunks matching no query term score 0.
    pub fn score_all(&self, query_tokens: &[String]) -> Vec<f64> {
        let n = self.doc_lens.len();
        let mut scores = vec![0f64; n];
        let mut seen: Vec<&str> = Vec::new();
        for term in query_tokens {
            if seen.contains(&term.as_str()) {
                continue;
            }
            seen.push(term);
            let Some(postings) = self.terms.get(term) else {
                continue;
            };
            let idf = idf(n, postings.len());
            for &(idx, tf) in postings {
                let dl = f64::from(self.doc_lens[idx as usize]);
                let tf = f64::from(tf);
                let denom = tf + K1 * (1.0 - B + B * dl / self.avgdl);
                scores[idx as usize] += idf * tf * (K1 + 1.0) / denom;
            }
        }
        scores
    }

    /// Serialized form: one line per term, in term order.
    pub fn to_lines(&self) -> Vec<PostingLine> {
        self.terms
            .iter()
            .map(|(term, postings)| PostingLine {
                term: term.clone(),
                postings: postings.clone(),
            })
            .collect()
    }

    pub fn from_lines(lines: Vec<PostingLine>, doc_lens: Vec<u32>) -> Self {
        let terms = lines.into_iter().map(|l| (l.term, l.postings)).collect();
        let total: u64 = doc_lens.iter().map(|&l| u64::from(l)).sum();
        let avgdl = if doc_lens.is_empty() {
            0.0
        } else {
            total as f64 / doc_lens.len() as f64
        };
        Self { terms, doc_lens, avgdl }
    }
}

/// Non-negative idf: ln(1 + (N - df + 0.5) / (df + 0.5)).
pub fn idf(n: usize, df: usize) -> f64 {
    ((n as f64 - df as f64 + 0.5) / (df as f64 + 0.5) + 1.0).ln()
}
