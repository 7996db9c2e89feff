//! Three-tier query strategy and per-document aggregation.
//!
//! A query is tried as an exact phrase first, then as an AND of its terms,
//! then as an OR. The first tier with at least one eligible chunk hit wins;
//! hits are grouped by parent document and scored by their best chunk.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::{Analyzer, Token};
use crate::index::{InvertedIndex, ScoredChunk};
use crate::ingest::ChunkRecord;
use crate::store::{DocumentStatus, FigureRecord, Store, StoreError, TableRecord};

pub const DEFAULT_MAX_RESULTS: usize = 10;
pub const SNIPPET_WINDOW: usize = 200;
pub const MAX_SNIPPETS_PER_DOCUMENT: usize = 3;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("index and store disagree: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchQuery {
    pub query_text: String,
    pub max_results: usize,
    pub doc_filter: Option<BTreeSet<String>>,
}

impl SearchQuery {
    pub fn new(query_text: impl Into<String>) -> Self {
        Self {
            query_text: query_text.into(),
            max_results: DEFAULT_MAX_RESULTS,
            doc_filter: None,
        }
    }

    pub fn with_max_results(mut self, max_results: usize) -> Self {
        self.max_results = max_results.max(1);
        self
    }

    pub fn with_doc_filter<I: IntoIterator<Item = String>>(mut self, ids: I) -> Self {
        self.doc_filter = Some(ids.into_iter().collect());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Phrase,
    All,
    Any,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Phrase => "phrase",
            Tier::All => "all",
            Tier::Any => "any",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub page_number: u32,
    pub text: String,
    pub match_term: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub parent_doc_id: String,
    pub filename: String,
    pub score: f64,
    pub tier: Tier,
    pub matched_pages: Vec<u32>,
    pub snippets: Vec<Snippet>,
    pub figures: Vec<FigureRecord>,
    pub tables: Vec<TableRecord>,
}

/// Ordered results plus the tier that produced them. An empty response
/// reports [`Tier::Any`], the last tier attempted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub tier: Tier,
    pub results: Vec<SearchResult>,
}

impl SearchResponse {
    pub fn empty() -> Self {
        Self {
            tier: Tier::Any,
            results: Vec::new(),
        }
    }
}

/// Up to `window` characters around `match_position` (a character offset),
/// half before and half after, shifted inward at the chunk edges.
pub fn make_snippet(
    chunk: &ChunkRecord,
    match_position: usize,
    window: usize,
    match_term: &str,
) -> Snippet {
    let char_count = chunk.text.chars().count();
    let (start, end) = if char_count <= window {
        (0, char_count)
    } else {
        let start = match_position
            .saturating_sub(window / 2)
            .min(char_count - window);
        (start, start + window)
    };
    Snippet {
        page_number: chunk.page_number,
        text: chunk.text.chars().skip(start).take(end - start).collect(),
        match_term: match_term.to_string(),
    }
}

/// Fills in figures and tables for the result's matched pages.
pub fn attach_context(store: &Store, mut result: SearchResult) -> Result<SearchResult, SearchError> {
    let pages: BTreeSet<u32> = result.matched_pages.iter().copied().collect();
    let (figures, tables) = store
        .records_for_pages(&result.parent_doc_id, &pages)
        .map_err(|e| match e {
            StoreError::NotFound(id) => SearchError::Inconsistent(format!("document `{id}` vanished")),
            other => SearchError::Store(other),
        })?;
    result.figures = figures;
    result.tables = tables;
    Ok(result)
}

/// Start positions of `query` (relative layout preserved) in `tokens`.
fn phrase_starts(tokens: &[Token], query: &[Token]) -> Option<usize> {
    let first = query.first()?;
    let by_pos: HashMap<u32, &str> = tokens.iter().map(|t| (t.position, t.text.as_str())).collect();
    tokens.iter().position(|t| {
        query.iter().all(|q| {
            let delta = q.position - first.position;
            by_pos.get(&(t.position + delta)) == Some(&q.text.as_str())
        })
    })
}

fn char_offset(text: &str, byte_offset: usize) -> usize {
    text[..byte_offset].chars().count()
}

fn snippet_for(
    analyzer: &Analyzer,
    chunk: &ChunkRecord,
    tier: Tier,
    query: &[Token],
) -> Option<Snippet> {
    let tokens = analyzer.analyze(&chunk.text);
    let anchor = match tier {
        Tier::Phrase => phrase_starts(&tokens, query).map(|i| &tokens[i]),
        Tier::All | Tier::Any => {
            let terms: BTreeSet<&str> = query.iter().map(|t| t.text.as_str()).collect();
            tokens.iter().find(|t| terms.contains(t.text.as_str()))
        }
    }?;
    Some(make_snippet(
        chunk,
        char_offset(&chunk.text, anchor.offset),
        SNIPPET_WINDOW,
        &anchor.text,
    ))
}

/// Runs the query. The caller must hold `index` and `store` consistent for
/// the duration of the call.
pub fn search(
    index: &InvertedIndex,
    store: &Store,
    analyzer: &Analyzer,
    query: &SearchQuery,
) -> Result<SearchResponse, SearchError> {
    let tokens = analyzer.analyze(&query.query_text);
    if tokens.is_empty() {
        return Ok(SearchResponse::empty());
    }
    let terms: Vec<String> = tokens.iter().map(|t| t.text.clone()).collect();

    let mut owners: HashMap<String, Option<ChunkRecord>> = HashMap::new();
    let mut eligible_docs: HashMap<String, bool> = HashMap::new();
    let mut eligible = |hits: Vec<ScoredChunk>| -> Vec<(ScoredChunk, ChunkRecord)> {
        hits.into_iter()
            .filter_map(|hit| {
                let chunk = owners
                    .entry(hit.chunk_ref.clone())
                    .or_insert_with(|| store.chunk(&hit.chunk_ref))
                    .clone()?;
                let doc_ok = *eligible_docs
                    .entry(chunk.parent_doc_id.clone())
                    .or_insert_with(|| {
                        let indexed = store
                            .get_document(&chunk.parent_doc_id)
                            .is_some_and(|d| d.status == DocumentStatus::Indexed);
                        let allowed = query
                            .doc_filter
                            .as_ref()
                            .is_none_or(|f| f.contains(&chunk.parent_doc_id));
                        indexed && allowed
                    });
                doc_ok.then_some((hit, chunk))
            })
            .collect()
    };

    let (tier, hits) = [Tier::Phrase, Tier::All, Tier::Any]
        .into_iter()
        .map(|tier| {
            let raw = match tier {
                Tier::Phrase => index.query_phrase(&tokens),
                Tier::All => index.query_all(&terms),
                Tier::Any => index.query_any(&terms),
            };
            (tier, eligible(raw))
        })
        .find(|(_, hits)| !hits.is_empty())
        .unwrap_or((Tier::Any, Vec::new()));
    if hits.is_empty() {
        return Ok(SearchResponse::empty());
    }

    // Hits arrive ranked, so each group is ranked too.
    let mut groups: BTreeMap<String, Vec<(ScoredChunk, ChunkRecord)>> = BTreeMap::new();
    for (hit, chunk) in hits {
        groups.entry(chunk.parent_doc_id.clone()).or_default().push((hit, chunk));
    }
    let mut ranked: Vec<(String, Vec<(ScoredChunk, ChunkRecord)>)> = groups.into_iter().collect();
    ranked.sort_by(|a, b| {
        b.1[0]
            .0
            .score
            .total_cmp(&a.1[0].0.score)
            .then_with(|| a.0.cmp(&b.0))
    });
    ranked.truncate(query.max_results.max(1));

    let mut results = Vec::with_capacity(ranked.len());
    for (doc_id, group) in ranked {
        let document = store
            .get_document(&doc_id)
            .ok_or_else(|| SearchError::Inconsistent(format!("document `{doc_id}` vanished")))?;
        let matched_pages: BTreeSet<u32> = group.iter().map(|(_, c)| c.page_number).collect();
        let snippets = group
            .iter()
            .take(MAX_SNIPPETS_PER_DOCUMENT)
            .filter_map(|(_, chunk)| snippet_for(analyzer, chunk, tier, &tokens))
            .collect();
        let result = SearchResult {
            parent_doc_id: doc_id,
            filename: document.filename,
            score: group[0].0.score,
            tier,
            matched_pages: matched_pages.into_iter().collect(),
            snippets,
            figures: Vec::new(),
            tables: Vec::new(),
        };
        results.push(attach_context(store, result)?);
    }
    Ok(SearchResponse { tier, results })
}
