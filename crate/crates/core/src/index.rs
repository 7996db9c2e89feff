//! Positional inverted index over chunks with BM25 ranking.
//!
//! ```text
//! score(D, q) = sum_{t in q} IDF(t) * f(t,D) * (k1 + 1) / (f(t,D) + k1 * (1 - b + b * |D| / avgdl))
//! IDF(t)      = ln(1 + (N - n(t) + 0.5) / (n(t) + 0.5))
//! ```
//!
//! `q` is a multiset: a term repeated in the query contributes once per repetition.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::Token;

#[derive(Debug, Error, PartialEq)]
pub enum IndexError {
    #[error("chunk `{0}` is already indexed")]
    DuplicateChunk(String),
    #[error("chunk `{0}` is not indexed")]
    ChunkNotFound(String),
    #[error("invalid BM25 parameters: k1={k1}, b={b}")]
    InvalidParams { k1: f64, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self, IndexError> {
        if !(k1.is_finite() && k1 >= 0.0 && (0.0..=1.0).contains(&b)) {
            return Err(IndexError::InvalidParams { k1, b });
        }
        Ok(Self { k1, b })
    }
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Posting {
    pub chunk_ref: String,
    pub term_frequency: u32,
    pub positions: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexStats {
    pub total_chunks: usize,
    pub avg_chunk_length: f64,
    pub chunk_lengths: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk_ref: String,
    pub score: f64,
}

#[derive(Debug, Clone)]
struct ChunkEntry {
    chunk_ref: String,
    length: u32,
    terms: Vec<String>,
}

type ChunkId = u32;

#[derive(Debug, Clone, Default)]
pub struct InvertedIndex {
    params: Bm25Params,
    ids: HashMap<String, ChunkId>,
    chunks: Vec<Option<ChunkEntry>>,
    free: Vec<ChunkId>,
    postings: HashMap<String, BTreeMap<ChunkId, Vec<u32>>>,
    total_length: u64,
}

impl InvertedIndex {
    pub fn new(params: Bm25Params) -> Self {
        Self {
            params,
            ..Self::default()
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, chunk_ref: &str) -> bool {
        self.ids.contains_key(chunk_ref)
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    pub fn add_chunk(&mut self, chunk_ref: &str, tokens: &[Token]) -> Result<(), IndexError> {
        if self.ids.contains_key(chunk_ref) {
            return Err(IndexError::DuplicateChunk(chunk_ref.to_string()));
        }
        let mut by_term: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
        for token in tokens {
            by_term.entry(&token.text).or_default().push(token.position);
        }

        let id = match self.free.pop() {
            Some(id) => id,
            None => {
                self.chunks.push(None);
                (self.chunks.len() - 1) as ChunkId
            }
        };
        let mut terms = Vec::with_capacity(by_term.len());
        for (term, mut positions) in by_term {
            positions.sort_unstable();
            positions.dedup();
            self.postings
                .entry(term.to_string())
                .or_default()
                .insert(id, positions);
            terms.push(term.to_string());
        }
        let length = tokens.len() as u32;
        self.chunks[id as usize] = Some(ChunkEntry {
            chunk_ref: chunk_ref.to_string(),
            length,
            terms,
        });
        self.ids.insert(chunk_ref.to_string(), id);
        self.total_length += u64::from(length);
        Ok(())
    }

    pub fn remove_chunk(&mut self, chunk_ref: &str) -> Result<(), IndexError> {
        let id = self
            .ids
            .remove(chunk_ref)
            .ok_or_else(|| IndexError::ChunkNotFound(chunk_ref.to_string()))?;
        let entry = self.chunks[id as usize]
            .take()
            .expect("id map and chunk table out of sync");
        for term in &entry.terms {
            if let Some(list) = self.postings.get_mut(term) {
                list.remove(&id);
                if list.is_empty() {
                    self.postings.remove(term);
                }
            }
        }
        self.total_length -= u64::from(entry.length);
        self.free.push(id);
        Ok(())
    }

    pub fn stats(&self) -> IndexStats {
        let chunk_lengths: BTreeMap<String, u32> = self
            .chunks
            .iter()
            .flatten()
            .map(|c| (c.chunk_ref.clone(), c.length))
            .collect();
        IndexStats {
            total_chunks: self.len(),
            avg_chunk_length: self.avg_chunk_length(),
            chunk_lengths,
        }
    }

    fn avg_chunk_length(&self) -> f64 {
        if self.ids.is_empty() {
            0.0
        } else {
            self.total_length as f64 / self.ids.len() as f64
        }
    }

    /// Postings for `term`, ordered by chunk reference.
    pub fn postings(&self, term: &str) -> Vec<Posting> {
        let mut out: Vec<Posting> = self
            .postings
            .get(term)
            .into_iter()
            .flatten()
            .map(|(id, positions)| Posting {
                chunk_ref: self.chunk_ref(*id).to_string(),
                term_frequency: positions.len() as u32,
                positions: positions.clone(),
            })
            .collect();
        out.sort_by(|a, b| a.chunk_ref.cmp(&b.chunk_ref));
        out
    }

    /// Number of chunks containing `term`.
    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, BTreeMap::len)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.ids.len() as f64;
        let df = self.document_frequency(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    pub fn bm25_score(
        &self,
        query_terms: &[String],
        chunk_ref: &str,
        params: Bm25Params,
    ) -> Result<f64, IndexError> {
        let id = *self
            .ids
            .get(chunk_ref)
            .ok_or_else(|| IndexError::ChunkNotFound(chunk_ref.to_string()))?;
        Ok(self.score_id(query_terms, id, params))
    }

    fn score_id(&self, query_terms: &[String], id: ChunkId, params: Bm25Params) -> f64 {
        let length = self.chunk_entry(id).length as f64;
        let avgdl = self.avg_chunk_length();
        let mut score = 0.0;
        for term in query_terms {
            let Some(freq) = self.term_frequency(term, id) else {
                continue;
            };
            // freq > 0 implies length > 0 and therefore avgdl > 0.
            let tf = freq as f64;
            let norm = params.k1 * (1.0 - params.b + params.b * length / avgdl);
            score += self.idf(term) * (tf * (params.k1 + 1.0)) / (tf + norm);
        }
        score
    }

    fn term_frequency(&self, term: &str, id: ChunkId) -> Option<usize> {
        self.postings
            .get(term)
            .and_then(|list| list.get(&id))
            .map(Vec::len)
    }

    fn chunk_entry(&self, id: ChunkId) -> &ChunkEntry {
        self.chunks[id as usize]
            .as_ref()
            .expect("posting references a removed chunk")
    }

    fn chunk_ref(&self, id: ChunkId) -> &str {
        &self.chunk_entry(id).chunk_ref
    }

    /// Chunks containing every distinct term.
    fn intersect(&self, distinct: &BTreeSet<&str>) -> Vec<ChunkId> {
        let mut lists = Vec::with_capacity(distinct.len());
        for term in distinct {
            match self.postings.get(*term) {
                Some(list) => lists.push(list),
                None => return Vec::new(),
            }
        }
        lists.sort_by_key(|l| l.len());
        let Some((first, rest)) = lists.split_first() else {
            return Vec::new();
        };
        first
            .keys()
            .copied()
            .filter(|id| rest.iter().all(|l| l.contains_key(id)))
            .collect()
    }

    fn rank(&self, ids: impl IntoIterator<Item = ChunkId>, terms: &[String]) -> Vec<ScoredChunk> {
        let mut out: Vec<ScoredChunk> = ids
            .into_iter()
            .map(|id| ScoredChunk {
                chunk_ref: self.chunk_ref(id).to_string(),
                score: self.score_id(terms, id, self.params),
            })
            .collect();
        sort_ranked(&mut out);
        out
    }

    /// Chunks where the query terms occur with the same relative positions as
    /// in the analyzed query.
    pub fn query_phrase(&self, query_tokens: &[Token]) -> Vec<ScoredChunk> {
        let Some(first) = query_tokens.first() else {
            return Vec::new();
        };
        let offsets: Vec<(&str, u32)> = query_tokens
            .iter()
            .map(|t| (t.text.as_str(), t.position.saturating_sub(first.position)))
            .collect();
        let distinct: BTreeSet<&str> = offsets.iter().map(|(t, _)| *t).collect();
        let candidates = self.intersect(&distinct);
        let matching = candidates.into_iter().filter(|&id| {
            let starts = &self.postings[first.text.as_str()][&id];
            starts.iter().any(|&start| {
                offsets.iter().all(|(term, delta)| {
                    self.postings[*term][&id]
                        .binary_search(&(start + delta))
                        .is_ok()
                })
            })
        });
        let terms: Vec<String> = query_tokens.iter().map(|t| t.text.clone()).collect();
        let matching: Vec<ChunkId> = matching.collect();
        self.rank(matching, &terms)
    }

    /// Chunks containing every distinct query term (AND).
    pub fn query_all(&self, query_terms: &[String]) -> Vec<ScoredChunk> {
        let distinct: BTreeSet<&str> = query_terms.iter().map(String::as_str).collect();
        if distinct.is_empty() {
            return Vec::new();
        }
        let ids = self.intersect(&distinct);
        self.rank(ids, query_terms)
    }

    /// Chunks containing at least one query term (OR).
    pub fn query_any(&self, query_terms: &[String]) -> Vec<ScoredChunk> {
        let mut ids = BTreeSet::new();
        for term in query_terms {
            if let Some(list) = self.postings.get(term) {
                ids.extend(list.keys().copied());
            }
        }
        self.rank(ids, query_terms)
    }
}

/// Score descending, then chunk reference ascending.
pub fn sort_ranked(results: &mut [ScoredChunk]) {
    results.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.chunk_ref.cmp(&b.chunk_ref))
    });
}
