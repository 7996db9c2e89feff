//! Helpers shared by the integration tests: random corpora, brute-force
//! oracles and engine fixtures.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use gs_core::analyzer::Token;
use gs_core::ingest::UploadRequest;
use gs_core::{Analyzer, Bm25Params, Engine, EngineConfig, InvertedIndex};
use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::Rng;
use tempfile::TempDir;

pub const FIXTURE_38331: &str = include_str!("../fixtures/ts_138331_excerpt.txt");

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Small vocabulary so random chunks share terms; includes stopwords so
/// position gaps occur.
pub const WORDS: &[&str] = &[
    "alpha", "beta", "gamma", "delta", "signal", "timing", "block", "the", "of", "and",
];

pub struct RandomCorpus {
    pub chunks: Vec<(String, Vec<Token>)>,
    pub texts: Vec<String>,
}

impl RandomCorpus {
    /// Up to `max_chunks` chunks of up to `max_tokens` words each.
    pub fn generate(rng: &mut StdRng, analyzer: &Analyzer, max_chunks: usize, max_tokens: usize) -> Self {
        let n = rng.random_range(1..=max_chunks);
        let texts: Vec<String> = (0..n)
            .map(|_| {
                let len = rng.random_range(0..=max_tokens);
                (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
            })
            .collect();
        let chunks = texts
            .iter()
            .enumerate()
            .map(|(i, text)| (format!("c{i:03}"), analyzer.analyze(text)))
            .collect();
        Self { chunks, texts }
    }

    pub fn index(&self, params: Bm25Params) -> InvertedIndex {
        let mut index = InvertedIndex::new(params);
        for (id, tokens) in &self.chunks {
            index.add_chunk(id, tokens).unwrap();
        }
        index
    }

    fn terms_of(tokens: &[Token]) -> Vec<&str> {
        tokens.iter().map(|t| t.text.as_str()).collect()
    }

    /// Direct evaluation of the BM25 sum for one chunk.
    pub fn bm25(&self, query: &[String], chunk: &str, params: Bm25Params) -> f64 {
        let n = self.chunks.len() as f64;
        let total: usize = self.chunks.iter().map(|(_, t)| t.len()).sum();
        let avgdl = total as f64 / n;
        let doc = &self.chunks.iter().find(|(id, _)| id == chunk).unwrap().1;
        let dl = doc.len() as f64;
        let mut score = 0.0;
        for q in query {
            let f = doc.iter().filter(|t| &t.text == q).count() as f64;
            if f == 0.0 {
                continue;
            }
            let df = self
                .chunks
                .iter()
                .filter(|(_, t)| t.iter().any(|x| &x.text == q))
                .count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * f * (params.k1 + 1.0) / (f + params.k1 * (1.0 - params.b + params.b * dl / avgdl));
        }
        score
    }

    /// Chunks where the query's relative token layout appears.
    pub fn phrase_oracle(&self, query: &[Token]) -> BTreeSet<String> {
        let Some(first) = query.first() else { return BTreeSet::new() };
        self.chunks
            .iter()
            .filter(|(_, tokens)| {
                let at: BTreeMap<u32, &str> = tokens.iter().map(|t| (t.position, t.text.as_str())).collect();
                tokens.iter().any(|start| {
                    query.iter().all(|q| {
                        at.get(&(start.position + (q.position - first.position))) == Some(&q.text.as_str())
                    })
                })
            })
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn all_oracle(&self, query: &[String]) -> BTreeSet<String> {
        if query.is_empty() {
            return BTreeSet::new();
        }
        self.chunks
            .iter()
            .filter(|(_, t)| {
                let terms = Self::terms_of(t);
                query.iter().all(|q| terms.contains(&q.as_str()))
            })
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn any_oracle(&self, query: &[String]) -> BTreeSet<String> {
        self.chunks
            .iter()
            .filter(|(_, t)| {
                let terms = Self::terms_of(t);
                query.iter().any(|q| terms.contains(&q.as_str()))
            })
            .map(|(id, _)| id.clone())
            .collect()
    }
}

/// A random query over the corpus vocabulary, 1 to 4 words.
pub fn random_query(rng: &mut StdRng) -> String {
    let len = rng.random_range(1..=4);
    (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// A contiguous slice of a chunk's source words, so phrase hits are common.
pub fn phrase_from(rng: &mut StdRng, corpus_text: &[String]) -> String {
    let text = corpus_text.choose(rng).unwrap();
    let words: Vec<&str> = text.split(' ').filter(|w| !w.is_empty()).collect();
    if words.is_empty() {
        return random_query(rng);
    }
    let start = rng.random_range(0..words.len());
    let len = rng.random_range(1..=3.min(words.len() - start));
    words[start..start + len].join(" ")
}

pub fn relative_eq(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

pub fn open_engine(dir: &std::path::Path) -> Engine {
    Engine::open(dir, EngineConfig::default()).unwrap()
}

pub fn temp_engine() -> (TempDir, Engine) {
    let dir = tempfile::tempdir().unwrap();
    let engine = open_engine(dir.path());
    (dir, engine)
}

pub fn ingest_text(engine: &Engine, filename: &str, text: &str) -> String {
    engine
        .ingest_document(UploadRequest::new(filename, text.as_bytes().to_vec()))
        .unwrap()
        .doc_id
}

const TECH_WORDS: &[&str] = &[
    "synchronization", "signal", "block", "primary", "secondary", "timing", "recovery", "modulation",
    "carrier", "subcarrier", "symbol", "frame", "slot", "beam", "measurement", "configuration",
    "resource", "channel", "physical", "broadcast", "downlink", "uplink", "procedure", "report",
    "periodicity", "offset", "index", "cell", "detection", "reference", "power", "threshold",
    "window", "duration", "paging", "access", "random", "preamble", "bandwidth", "numerology",
    "the", "of", "and", "in", "to", "is", "for", "with", "on", "a",
];

/// Plain technical-looking text: `pages` pages of roughly `page_bytes`
/// bytes, separated by form feeds. Deterministic in `rng`.
pub fn technical_document(rng: &mut StdRng, pages: usize, page_bytes: usize) -> String {
    let mut doc = String::with_capacity(pages * (page_bytes + 16));
    for p in 0..pages {
        if p > 0 {
            doc.push('\u{000C}');
        }
        let start = doc.len();
        let mut sentence = 0;
        while doc.len() - start < page_bytes {
            let word = *TECH_WORDS.choose(rng).unwrap();
            doc.push_str(word);
            sentence += 1;
            if sentence > 12 && rng.random_ratio(1, 6) {
                doc.push_str(".\n");
                sentence = 0;
            } else {
                doc.push(' ');
            }
        }
    }
    doc
}
