//! Document grounding for coding agents.

pub mod analyzer;
pub mod engine;
pub mod index;
pub mod ingest;
pub mod lsp_bridge;
pub mod search;
pub mod service;
pub mod skills;
pub mod store;

pub use analyzer::{Analyzer, AnalyzerConfig, Token};
pub use engine::{Engine, EngineConfig, EngineError};
pub use index::{Bm25Params, InvertedIndex, ScoredChunk};
pub use search::{SearchQuery, SearchResponse, SearchResult, Tier};
