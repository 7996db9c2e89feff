//! Ties the store, the index and the ingestion pipeline together.
//!
//! The index only ever contains chunks of documents whose status is
//! `indexed`. Status changes that affect searchability happen while the
//! index write lock is held, so a search never observes a half-added
//! document.

use std::path::Path;
use std::sync::RwLock;

use thiserror::Error;

use crate::analyzer::{Analyzer, AnalyzerConfig, Token};
use crate::index::{Bm25Params, IndexError, InvertedIndex};
use crate::ingest::{
    self, compute_doc_id, plan_processing, AutoExtractor, DocumentContent, IngestError, PageExtractor,
    ProcessingPlan, UploadRequest,
};
use crate::search::{self, SearchError, SearchQuery, SearchResponse};
use crate::store::{DocumentRecord, DocumentStatus, Store, StoreError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("document `{0}` not found")]
    NotFound(String),
}

#[derive(Debug, Clone, Default)]
pub struct EngineConfig {
    pub analyzer: AnalyzerConfig,
    pub bm25: Bm25Params,
    pub extractor: AutoExtractor,
}

/// A registered upload waiting for extraction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UploadTicket {
    pub doc_id: String,
    /// An earlier document with the same filename was removed.
    pub replaced: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutcome {
    pub doc_id: String,
    pub replaced: bool,
    pub plan: ProcessingPlan,
    pub content: DocumentContent,
}

pub struct Engine {
    store: Store,
    index: RwLock<InvertedIndex>,
    analyzer: Analyzer,
    extractor: AutoExtractor,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("dir", &self.store.dir()).finish()
    }
}

impl Engine {
    /// Opens the store, fails any ingestion that was interrupted by a
    /// shutdown, and rebuilds the index from indexed documents.
    pub fn open(dir: impl AsRef<Path>, config: EngineConfig) -> Result<Self, EngineError> {
        let store = Store::open(dir)?;
        let analyzer = Analyzer::new(config.analyzer);
        let mut index = InvertedIndex::new(config.bm25);

        for doc in store.list_documents() {
            match doc.status {
                DocumentStatus::Uploaded | DocumentStatus::Processing => {
                    if doc.status == DocumentStatus::Uploaded {
                        store.set_status(&doc.doc_id, DocumentStatus::Processing, None)?;
                    }
                    // A batch that landed before the interruption is dropped too.
                    if let Some(entry) = store.document_entry(&doc.doc_id) {
                        if !(entry.chunks.is_empty() && entry.figures.is_empty() && entry.tables.is_empty()) {
                            store.put_batch(entry.document, vec![], vec![], vec![])?;
                        }
                    }
                    store.set_status(
                        &doc.doc_id,
                        DocumentStatus::Failed,
                        Some("ingestion interrupted before completion".into()),
                    )?;
                }
                DocumentStatus::Indexed => {
                    for chunk in store.chunks_for_document(&doc.doc_id)? {
                        index.add_chunk(&chunk.chunk_id, &analyzer.analyze(&chunk.text))?;
                    }
                }
                DocumentStatus::Failed => {}
            }
        }

        Ok(Self {
            store,
            index: RwLock::new(index),
            analyzer,
            extractor: config.extractor,
        })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn analyzer(&self) -> &Analyzer {
        &self.analyzer
    }

    pub fn extractor(&self) -> &AutoExtractor {
        &self.extractor
    }

    /// Runs `f` against a consistent view of the index.
    pub fn with_index<R>(&self, f: impl FnOnce(&InvertedIndex) -> R) -> R {
        f(&self.index.read().unwrap())
    }

    pub fn get_document(&self, doc_id: &str) -> Option<DocumentRecord> {
        self.store.get_document(doc_id)
    }

    pub fn list_documents(&self) -> Vec<DocumentRecord> {
        self.store.list_documents()
    }

    /// Validates the upload and records the document as `uploaded`,
    /// removing any earlier document with the same filename.
    pub fn begin_upload(&self, filename: &str, size: usize) -> Result<UploadTicket, EngineError> {
        ingest::check_size(size)?;
        let doc_id = compute_doc_id(filename)?;
        let replaced = self.store.get_document(&doc_id).is_some();
        if replaced {
            self.delete_document(&doc_id)?;
        }
        self.store.create_document(DocumentRecord::new(&doc_id, filename))?;
        Ok(UploadTicket { doc_id, replaced })
    }

    /// Moves an `uploaded` document to `processing`; no-op if it already is.
    pub fn mark_processing(&self, ticket: &UploadTicket) -> Result<(), EngineError> {
        let doc = self
            .store
            .get_document(&ticket.doc_id)
            .ok_or_else(|| EngineError::NotFound(ticket.doc_id.clone()))?;
        if doc.status == DocumentStatus::Uploaded {
            self.store.set_status(&ticket.doc_id, DocumentStatus::Processing, None)?;
        }
        Ok(())
    }

    /// Extracts and indexes a document registered with [`Engine::begin_upload`].
    /// On failure the document is marked `failed` and keeps no child records.
    pub fn process_upload(
        &self,
        ticket: &UploadTicket,
        request: &UploadRequest,
        extractor: Option<&dyn PageExtractor>,
        plan: Option<ProcessingPlan>,
    ) -> Result<(ProcessingPlan, DocumentContent), EngineError> {
        let doc_id = &ticket.doc_id;
        self.mark_processing(ticket)?;
        match self.extract_and_index(doc_id, request, extractor, plan) {
            Ok(done) => Ok(done),
            Err(err) => {
                let reason = err.to_string();
                tracing::warn!(doc_id = %doc_id, %reason, "ingestion failed");
                if let Some(doc) = self.store.get_document(doc_id) {
                    if doc.status == DocumentStatus::Processing {
                        // Drop any records a partial batch may have left.
                        self.store.put_batch(doc, vec![], vec![], vec![])?;
                        self.store.set_status(doc_id, DocumentStatus::Failed, Some(reason))?;
                    }
                }
                Err(err)
            }
        }
    }

    fn extract_and_index(
        &self,
        doc_id: &str,
        request: &UploadRequest,
        extractor: Option<&dyn PageExtractor>,
        plan: Option<ProcessingPlan>,
    ) -> Result<(ProcessingPlan, DocumentContent), EngineError> {
        let source = match extractor {
            Some(e) => e.open(&request.bytes, request.markdown_mode),
            None => self
                .extractor
                .open_named(&request.filename, &request.bytes, request.markdown_mode),
        }
        .map_err(IngestError::from)?;
        let plan = plan.unwrap_or_else(|| plan_processing(source.page_count()));
        let content = ingest::process_document(source.as_ref(), doc_id, &plan)?;

        let analyzed: Vec<(String, Vec<Token>)> = content
            .chunks
            .iter()
            .map(|c| (c.chunk_id.clone(), self.analyzer.analyze(&c.text)))
            .collect();

        let mut document = self
            .store
            .get_document(doc_id)
            .ok_or_else(|| EngineError::NotFound(doc_id.to_string()))?;
        document.total_pages = content.total_pages;
        self.store.put_batch(
            document,
            content.chunks.clone(),
            content.figures.clone(),
            content.tables.clone(),
        )?;

        let mut index = self.index.write().unwrap();
        let mut added = Vec::with_capacity(analyzed.len());
        let mut result = Ok(());
        for (chunk_id, tokens) in &analyzed {
            if let Err(e) = index.add_chunk(chunk_id, tokens) {
                result = Err(EngineError::from(e));
                break;
            }
            added.push(chunk_id);
        }
        if result.is_ok() {
            result = self
                .store
                .set_status(doc_id, DocumentStatus::Indexed, None)
                .map_err(EngineError::from);
        }
        if result.is_err() {
            for chunk_id in added {
                let _ = index.remove_chunk(chunk_id);
            }
        }
        result.map(|()| (plan, content))
    }

    /// Registers and processes an upload in one call, using the engine's
    /// default extractor and the page-count based plan.
    pub fn ingest_document(&self, request: UploadRequest) -> Result<IngestOutcome, EngineError> {
        self.ingest_with(request, None, None)
    }

    pub fn ingest_with(
        &self,
        request: UploadRequest,
        extractor: Option<&dyn PageExtractor>,
        plan: Option<ProcessingPlan>,
    ) -> Result<IngestOutcome, EngineError> {
        request.validate()?;
        let ticket = self.begin_upload(&request.filename, request.bytes.len())?;
        let (plan, content) = self.process_upload(&ticket, &request, extractor, plan)?;
        Ok(IngestOutcome {
            doc_id: ticket.doc_id,
            replaced: ticket.replaced,
            plan,
            content,
        })
    }

    /// Removes a document, its child records and its postings.
    pub fn delete_document(&self, doc_id: &str) -> Result<(), EngineError> {
        let mut index = self.index.write().unwrap();
        let chunks = self.store.chunks_for_document(doc_id).map_err(|e| match e {
            StoreError::NotFound(id) => EngineError::NotFound(id),
            other => other.into(),
        })?;
        self.store.delete_document(doc_id)?;
        for chunk in chunks {
            if index.contains(&chunk.chunk_id) {
                index.remove_chunk(&chunk.chunk_id)?;
            }
        }
        Ok(())
    }

    pub fn search(&self, query: &SearchQuery) -> Result<SearchResponse, EngineError> {
        let index = self.index.read().unwrap();
        Ok(search::search(&index, &self.store, &self.analyzer, query)?)
    }

    /// Cross-checks store integrity and that the index holds exactly the
    /// chunks of indexed documents.
    pub fn check_invariants(&self) -> Result<(), String> {
        let index = self.index.read().unwrap();
        self.store.check_integrity()?;
        let mut expected = 0;
        for doc in self.store.list_documents() {
            let chunks = self.store.chunks_for_document(&doc.doc_id).map_err(|e| e.to_string())?;
            for chunk in &chunks {
                let indexed = index.contains(&chunk.chunk_id);
                if indexed != (doc.status == DocumentStatus::Indexed) {
                    return Err(format!(
                        "chunk `{}` indexed={indexed} but document is {}",
                        chunk.chunk_id, doc.status
                    ));
                }
            }
            if doc.status == DocumentStatus::Indexed {
                expected += chunks.len();
            }
        }
        if expected != index.len() {
            return Err(format!("index holds {} chunks, expected {expected}", index.len()));
        }
        Ok(())
    }
}
