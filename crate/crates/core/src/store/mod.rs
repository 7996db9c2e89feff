//! Durable storage for documents, chunks, figures and tables.
//!
//! Every mutation is a single checksummed log frame, fsynced before the
//! in-memory read model changes. A frame that did not reach the disk in full
//! is discarded on reopen, which makes each batch all-or-nothing.
//! [`Store::compact`] folds the log into a snapshot.

mod log;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ChunkRecord;
use log::{LogWriter, HEADER_LEN, LOG_MAGIC, SNAPSHOT_MAGIC};

pub use log::FORMAT_VERSION;

const LOG_FILE: &str = "store.log";
const SNAPSHOT_FILE: &str = "store.snapshot";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("store format version {found} is newer than supported version {supported}")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("document `{0}` not found")]
    NotFound(String),
    #[error("document `{0}` already exists")]
    AlreadyExists(String),
    #[error("invalid status transition for `{doc_id}`: {from} -> {to}")]
    InvalidTransition {
        doc_id: String,
        from: DocumentStatus,
        to: DocumentStatus,
    },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("store is unusable after a simulated crash; reopen it")]
    Crashed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocumentStatus {
    Uploaded,
    Processing,
    Indexed,
    Failed,
}

impl DocumentStatus {
    pub fn can_become(self, next: DocumentStatus) -> bool {
        use DocumentStatus::*;
        matches!(
            (self, next),
            (Uploaded, Processing) | (Processing, Indexed) | (Processing, Failed)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DocumentStatus::Uploaded => "uploaded",
            DocumentStatus::Processing => "processing",
            DocumentStatus::Indexed => "indexed",
            DocumentStatus::Failed => "failed",
        }
    }
}

impl std::fmt::Display for DocumentStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

mod rfc3339 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Millis, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub filename: String,
    #[serde(with = "rfc3339")]
    pub upload_time: DateTime<Utc>,
    pub total_pages: u32,
    pub status: DocumentStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
}

impl DocumentRecord {
    pub fn new(doc_id: impl Into<String>, filename: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            filename: filename.into(),
            // Millisecond precision so the record survives an RFC 3339 round trip.
            upload_time: DateTime::from_timestamp_millis(Utc::now().timestamp_millis())
                .unwrap_or_default(),
            total_pages: 0,
            status: DocumentStatus::Uploaded,
            failure_reason: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FigureRecord {
    pub figure_id: String,
    pub parent_doc_id: String,
    pub page_number: u32,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ocr_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRecord {
    pub table_id: String,
    pub parent_doc_id: String,
    pub page_number: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    pub markdown: String,
}

/// One document and everything extracted from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentEntry {
    pub document: DocumentRecord,
    pub chunks: Vec<ChunkRecord>,
    pub figures: Vec<FigureRecord>,
    pub tables: Vec<TableRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LogEntry {
    CreateDocument(DocumentRecord),
    SetStatus {
        doc_id: String,
        status: DocumentStatus,
        failure_reason: Option<String>,
        total_pages: Option<u32>,
    },
    PutBatch(DocumentEntry),
    Delete {
        doc_id: String,
    },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Snapshot {
    documents: Vec<DocumentEntry>,
}

#[derive(Debug, Default)]
struct State {
    docs: BTreeMap<String, DocumentEntry>,
    chunk_owner: BTreeMap<String, String>,
}

impl State {
    fn apply(&mut self, entry: LogEntry) {
        match entry {
            LogEntry::CreateDocument(record) => {
                self.remove(&record.doc_id);
                self.docs.insert(
                    record.doc_id.clone(),
                    DocumentEntry {
                        document: record,
                        chunks: Vec::new(),
                        figures: Vec::new(),
                        tables: Vec::new(),
                    },
                );
            }
            LogEntry::SetStatus {
                doc_id,
                status,
                failure_reason,
                total_pages,
            } => {
                if let Some(entry) = self.docs.get_mut(&doc_id) {
                    entry.document.status = status;
                    entry.document.failure_reason = failure_reason;
                    if let Some(pages) = total_pages {
                        entry.document.total_pages = pages;
                    }
                }
            }
            LogEntry::PutBatch(entry) => {
                let doc_id = entry.document.doc_id.clone();
                self.remove(&doc_id);
                for chunk in &entry.chunks {
                    self.chunk_owner.insert(chunk.chunk_id.clone(), doc_id.clone());
                }
                self.docs.insert(doc_id, entry);
            }
            LogEntry::Delete { doc_id } => self.remove(&doc_id),
        }
    }

    fn remove(&mut self, doc_id: &str) {
        if let Some(old) = self.docs.remove(doc_id) {
            for chunk in old.chunks {
                self.chunk_owner.remove(&chunk.chunk_id);
            }
        }
    }

    fn document(&self, doc_id: &str) -> Result<&DocumentEntry, StoreError> {
        self.docs
            .get(doc_id)
            .ok_or_else(|| StoreError::NotFound(doc_id.to_string()))
    }
}

#[derive(Debug)]
struct Writer {
    log: LogWriter,
    generation: u64,
    crash_after: Option<usize>,
    crashed: bool,
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    state: RwLock<State>,
    writer: Mutex<Writer>,
}

impl Store {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let mut state = State::default();

        let snapshot_path = dir.join(SNAPSHOT_FILE);
        let mut generation = 0;
        if let Some(bytes) = log::read_all(&snapshot_path)? {
            generation = log::decode_header(&bytes, SNAPSHOT_MAGIC, &snapshot_path)?;
            let (frames, _) = log::decode_frames(&bytes[HEADER_LEN..]);
            let frame = frames
                .first()
                .ok_or_else(|| StoreError::Corrupt("snapshot frame missing or damaged".into()))?;
            let snapshot: Snapshot = serde_json::from_slice(frame)
                .map_err(|e| StoreError::Corrupt(format!("snapshot: {e}")))?;
            for entry in snapshot.documents {
                state.apply(LogEntry::PutBatch(entry));
            }
        }

        let log_path = dir.join(LOG_FILE);
        let log = match log::read_all(&log_path)? {
            Some(bytes) => {
                let log_generation = log::decode_header(&bytes, LOG_MAGIC, &log_path)?;
                if log_generation < generation {
                    LogWriter::create(&log_path, generation)?
                } else {
                    generation = log_generation;
                    let (frames, valid) = log::decode_frames(&bytes[HEADER_LEN..]);
                    for frame in frames {
                        let entry: LogEntry = serde_json::from_slice(frame)
                            .map_err(|e| StoreError::Corrupt(format!("log entry: {e}")))?;
                        state.apply(entry);
                    }
                    LogWriter::open_at(&log_path, (HEADER_LEN + valid) as u64)?
                }
            }
            None => LogWriter::create(&log_path, generation)?,
        };

        Ok(Self {
            dir,
            state: RwLock::new(state),
            writer: Mutex::new(Writer {
                log,
                generation,
                crash_after: None,
                crashed: false,
            }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Validates against the current state, logs, then applies.
    fn commit(
        &self,
        validate: impl FnOnce(&State) -> Result<(), StoreError>,
        entry: LogEntry,
    ) -> Result<(), StoreError> {
        let mut writer = self.writer.lock().unwrap();
        if writer.crashed {
            return Err(StoreError::Crashed);
        }
        validate(&self.state.read().unwrap())?;
        let payload = serde_json::to_vec(&entry)
            .map_err(|e| StoreError::InvalidRecord(e.to_string()))?;
        let frame = log::encode_frame(&payload);
        if let Some(n) = writer.crash_after.take() {
            writer.crashed = true;
            writer.log.append_torn(&frame, n)?;
            return Err(StoreError::Crashed);
        }
        writer.log.append(&frame)?;
        self.state.write().unwrap().apply(entry);
        Ok(())
    }

    /// Makes the next write stop after `bytes` bytes of its log frame and
    /// leaves the store unusable, as if the process died. Test hook.
    #[doc(hidden)]
    pub fn inject_crash_after(&self, bytes: usize) {
        self.writer.lock().unwrap().crash_after = Some(bytes);
    }

    /// Records a new document in `uploaded` or `processing` state.
    pub fn create_document(&self, record: DocumentRecord) -> Result<(), StoreError> {
        if !matches!(record.status, DocumentStatus::Uploaded | DocumentStatus::Processing)
            || record.failure_reason.is_some()
        {
            return Err(StoreError::InvalidRecord(format!(
                "new document `{}` must be uploaded or processing",
                record.doc_id
            )));
        }
        let doc_id = record.doc_id.clone();
        self.commit(
            |s| match s.docs.contains_key(&doc_id) {
                true => Err(StoreError::AlreadyExists(doc_id.clone())),
                false => Ok(()),
            },
            LogEntry::CreateDocument(record),
        )
    }

    pub fn set_status(
        &self,
        doc_id: &str,
        status: DocumentStatus,
        failure_reason: Option<String>,
    ) -> Result<(), StoreError> {
        self.update_status(doc_id, status, failure_reason, None)
    }

    pub fn update_status(
        &self,
        doc_id: &str,
        status: DocumentStatus,
        failure_reason: Option<String>,
        total_pages: Option<u32>,
    ) -> Result<(), StoreError> {
        if failure_reason.is_some() != (status == DocumentStatus::Failed) {
            return Err(StoreError::InvalidRecord(
                "failure_reason must be present exactly when status is failed".into(),
            ));
        }
        self.commit(
            |s| {
                let from = s.document(doc_id)?.document.status;
                if from.can_become(status) {
                    Ok(())
                } else {
                    Err(StoreError::InvalidTransition {
                        doc_id: doc_id.to_string(),
                        from,
                        to: status,
                    })
                }
            },
            LogEntry::SetStatus {
                doc_id: doc_id.to_string(),
                status,
                failure_reason,
                total_pages,
            },
        )
    }

    /// Atomically stores a document with all of its records, replacing any
    /// previous records for the same id.
    pub fn put_batch(
        &self,
        document: DocumentRecord,
        chunks: Vec<ChunkRecord>,
        figures: Vec<FigureRecord>,
        tables: Vec<TableRecord>,
    ) -> Result<(), StoreError> {
        if document.status != DocumentStatus::Processing {
            return Err(StoreError::InvalidRecord(format!(
                "batch for `{}` must carry status processing, got {}",
                document.doc_id, document.status
            )));
        }
        let doc_id = document.doc_id.clone();
        let foreign = chunks
            .iter()
            .map(|c| &c.parent_doc_id)
            .chain(figures.iter().map(|f| &f.parent_doc_id))
            .chain(tables.iter().map(|t| &t.parent_doc_id))
            .find(|p| **p != doc_id);
        if let Some(p) = foreign {
            return Err(StoreError::InvalidRecord(format!(
                "record with parent `{p}` in batch for `{doc_id}`"
            )));
        }
        if let Some(t) = tables.iter().find(|t| t.markdown.is_empty()) {
            return Err(StoreError::InvalidRecord(format!("table `{}` is empty", t.table_id)));
        }
        let mut ids = BTreeSet::new();
        if let Some(c) = chunks.iter().find(|c| !ids.insert(c.chunk_id.as_str())) {
            return Err(StoreError::InvalidRecord(format!("duplicate chunk id `{}`", c.chunk_id)));
        }
        let chunk_ids: Vec<String> = chunks.iter().map(|c| c.chunk_id.clone()).collect();
        self.commit(
            |s| {
                for id in &chunk_ids {
                    if let Some(owner) = s.chunk_owner.get(id) {
                        if *owner != doc_id {
                            return Err(StoreError::InvalidRecord(format!(
                                "chunk id `{id}` already belongs to `{owner}`"
                            )));
                        }
                    }
                }
                Ok(())
            },
            LogEntry::PutBatch(DocumentEntry {
                document,
                chunks,
                figures,
                tables,
            }),
        )
    }

    pub fn delete_document(&self, doc_id: &str) -> Result<(), StoreError> {
        self.commit(
            |s| s.document(doc_id).map(|_| ()),
            LogEntry::Delete {
                doc_id: doc_id.to_string(),
            },
        )
    }

    pub fn get_document(&self, doc_id: &str) -> Option<DocumentRecord> {
        self.state
            .read()
            .unwrap()
            .docs
            .get(doc_id)
            .map(|e| e.document.clone())
    }

    pub fn list_documents(&self) -> Vec<DocumentRecord> {
        self.state
            .read()
            .unwrap()
            .docs
            .values()
            .map(|e| e.document.clone())
            .collect()
    }

    pub fn document_entry(&self, doc_id: &str) -> Option<DocumentEntry> {
        self.state.read().unwrap().docs.get(doc_id).cloned()
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<ChunkRecord> {
        let state = self.state.read().unwrap();
        let owner = state.chunk_owner.get(chunk_id)?;
        state.docs[owner]
            .chunks
            .iter()
            .find(|c| c.chunk_id == chunk_id)
            .cloned()
    }

    pub fn chunks_for_document(&self, doc_id: &str) -> Result<Vec<ChunkRecord>, StoreError> {
        Ok(self.state.read().unwrap().document(doc_id)?.chunks.clone())
    }

    /// Figures and tables whose page is in `pages`.
    pub fn records_for_pages(
        &self,
        doc_id: &str,
        pages: &BTreeSet<u32>,
    ) -> Result<(Vec<FigureRecord>, Vec<TableRecord>), StoreError> {
        let state = self.state.read().unwrap();
        let entry = state.document(doc_id)?;
        let figures = entry
            .figures
            .iter()
            .filter(|f| pages.contains(&f.page_number))
            .cloned()
            .collect();
        let tables = entry
            .tables
            .iter()
            .filter(|t| pages.contains(&t.page_number))
            .cloned()
            .collect();
        Ok((figures, tables))
    }

    /// Checks that every child record names its parent and that the chunk
    /// lookup table matches the documents.
    pub fn check_integrity(&self) -> Result<(), String> {
        let state = self.state.read().unwrap();
        let mut owners = BTreeMap::new();
        for (doc_id, entry) in &state.docs {
            if entry.document.doc_id != *doc_id {
                return Err(format!("document keyed `{doc_id}` has id `{}`", entry.document.doc_id));
            }
            if entry.document.failure_reason.is_some()
                != (entry.document.status == DocumentStatus::Failed)
            {
                return Err(format!("document `{doc_id}` failure_reason mismatch"));
            }
            let parents = entry
                .chunks
                .iter()
                .map(|c| &c.parent_doc_id)
                .chain(entry.figures.iter().map(|f| &f.parent_doc_id))
                .chain(entry.tables.iter().map(|t| &t.parent_doc_id));
            for parent in parents {
                if parent != doc_id {
                    return Err(format!("record under `{doc_id}` names parent `{parent}`"));
                }
            }
            for chunk in &entry.chunks {
                owners.insert(chunk.chunk_id.clone(), doc_id.clone());
            }
        }
        if owners != state.chunk_owner {
            return Err("chunk lookup table is out of sync".into());
        }
        Ok(())
    }

    /// Writes a snapshot of the current state and starts a new, empty log.
    pub fn compact(&self) -> Result<(), StoreError> {
        let mut writer = self.writer.lock().unwrap();
        if writer.crashed {
            return Err(StoreError::Crashed);
        }
        let snapshot = Snapshot {
            documents: self.state.read().unwrap().docs.values().cloned().collect(),
        };
        let payload =
            serde_json::to_vec(&snapshot).map_err(|e| StoreError::InvalidRecord(e.to_string()))?;
        let generation = writer.generation + 1;
        let mut bytes = log::encode_header(SNAPSHOT_MAGIC, generation);
        bytes.extend(log::encode_frame(&payload));
        log::write_atomically(&self.dir.join(SNAPSHOT_FILE), &bytes)?;
        writer.log = LogWriter::create(&self.dir.join(LOG_FILE), generation)?;
        writer.generation = generation;
        Ok(())
    }

    /// Current log size in bytes, header included.
    pub fn log_len(&self) -> u64 {
        self.writer.lock().unwrap().log.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(doc: &str, page: u32, ord: usize) -> ChunkRecord {
        ChunkRecord {
            chunk_id: format!("{doc}:{page}:{ord}"),
            parent_doc_id: doc.into(),
            page_number: page,
            char_start: ord * 3000,
            text: "x".repeat(150),
            text_processed: true,
        }
    }

    fn figure(doc: &str, page: u32) -> FigureRecord {
        FigureRecord {
            figure_id: format!("{doc}:{page}:0"),
            parent_doc_id: doc.into(),
            page_number: page,
            caption: "Figure".into(),
            ocr_text: None,
        }
    }

    fn table(doc: &str, page: u32) -> TableRecord {
        TableRecord {
            table_id: format!("{doc}:{page}:0"),
            parent_doc_id: doc.into(),
            page_number: page,
            caption: None,
            markdown: "a | b".into(),
        }
    }

    fn processing(doc: &str) -> DocumentRecord {
        let mut d = DocumentRecord::new(doc, format!("{doc}.txt"));
        d.status = DocumentStatus::Processing;
        d
    }

    #[test]
    fn batch_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = Store::open(dir.path()).unwrap();
            store
                .put_batch(
                    processing("d1"),
                    vec![chunk("d1", 1, 0), chunk("d1", 1, 1), chunk("d1", 2, 0)],
                    vec![figure("d1", 2)],
                    vec![],
                )
                .unwrap();
        }
        let store = Store::open(dir.path()).unwrap();
        assert_eq!(store.chunks_for_document("d1").unwrap().len(), 3);
        assert_eq!(store.document_entry("d1").unwrap().figures.len(), 1);
        assert!(store.chunk("d1:2:0").is_some());
        store.check_integrity().unwrap();
    }

    #[test]
    fn lifecycle_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        store.create_document(DocumentRecord::new("d", "d.txt")).unwrap();
        assert!(matches!(
            store.set_status("d", DocumentStatus::Indexed, None),
            Err(StoreError::InvalidTransition { .. })
        ));
        store.set_status("d", DocumentStatus::Processing, None).unwrap();
        assert!(store.set_status("d", DocumentStatus::Failed, None).is_err());
        store
            .set_status("d", DocumentStatus::Failed, Some("bad page".into()))
            .unwrap();
        let doc = store.get_document("d").unwrap();
        assert_eq!(doc.status, DocumentStatus::Failed);
        assert_eq!(doc.failure_reason.as_deref(), Some("bad page"));
        assert!(store.set_status("d", DocumentStatus::Processing, None).is_err());
    }

    #[test]
    fn batch_requires_processing_and_matching_parents() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let mut doc = processing("d");
        doc.status = DocumentStatus::Indexed;
        assert!(store.put_batch(doc, vec![], vec![], vec![]).is_err());
        assert!(store
            .put_batch(processing("d"), vec![chunk("other", 1, 0)], vec![], vec![])
            .is_err());
        assert!(store.get_document("d").is_none());
    }

    #[test]
    fn delete_removes_children_only_for_that_document() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        store
            .put_batch(processing("a"), vec![chunk("a", 1, 0)], vec![figure("a", 1)], vec![])
            .unwrap();
        store
            .put_batch(processing("b"), vec![chunk("b", 1, 0)], vec![], vec![table("b", 1)])
            .unwrap();
        store.delete_document("a").unwrap();
        assert!(store.get_document("a").is_none());
        assert!(store.chunk("a:1:0").is_none());
        assert!(store.chunk("b:1:0").is_some());
        assert!(matches!(store.delete_document("zz"), Err(StoreError::NotFound(_))));
        store.check_integrity().unwrap();
    }

    #[test]
    fn records_for_pages_filters_by_page() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        store
            .put_batch(
                processing("d"),
                vec![],
                vec![figure("d", 3)],
                vec![table("d", 5)],
            )
            .unwrap();
        let (f, t) = store.records_for_pages("d", &BTreeSet::from([3])).unwrap();
        assert_eq!((f.len(), t.len()), (1, 0));
        let (f, t) = store.records_for_pages("d", &BTreeSet::from([4])).unwrap();
        assert_eq!((f.len(), t.len()), (0, 0));
        let (f, t) = store.records_for_pages("d", &BTreeSet::from([3, 5])).unwrap();
        assert_eq!((f.len(), t.len()), (1, 1));
        assert!(matches!(
            store.records_for_pages("nope", &BTreeSet::new()),
            Err(StoreError::NotFound(_))
        ));
    }

    #[test]
    fn torn_write_is_discarded_on_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = Store::open(dir.path()).unwrap();
            store.put_batch(processing("a"), vec![chunk("a", 1, 0)], vec![], vec![]).unwrap();
            store.inject_crash_after(40);
            assert!(matches!(
                store.put_batch(processing("b"), vec![chunk("b", 1, 0)], vec![], vec![]),
                Err(StoreError::Crashed)
            ));
            assert!(matches!(store.delete_document("a"), Err(StoreError::Crashed)));
        }
        let store = Store::open(dir.path()).unwrap();
        assert!(store.get_document("a").is_some());
        assert!(store.get_document("b").is_none());
        // The torn tail was cut off, so new writes land on a clean log.
        store.put_batch(processing("c"), vec![], vec![], vec![]).unwrap();
        drop(store);
        assert!(Store::open(dir.path()).unwrap().get_document("c").is_some());
    }

    #[test]
    fn compaction_preserves_state() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = Store::open(dir.path()).unwrap();
            store.put_batch(processing("a"), vec![chunk("a", 1, 0)], vec![], vec![]).unwrap();
            store.put_batch(processing("b"), vec![chunk("b", 1, 0)], vec![], vec![]).unwrap();
            store.compact().unwrap();
            assert_eq!(store.log_len(), HEADER_LEN as u64);
            store.delete_document("a").unwrap();
        }
        let store = Store::open(dir.path()).unwrap();
        assert!(store.get_document("a").is_none());
        assert!(store.get_document("b").is_some());
        store.check_integrity().unwrap();
    }

    #[test]
    fn stale_log_after_snapshot_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let old_log;
        {
            let store = Store::open(dir.path()).unwrap();
            store.put_batch(processing("a"), vec![chunk("a", 1, 0)], vec![], vec![]).unwrap();
            store.delete_document("a").unwrap();
            old_log = std::fs::read(dir.path().join(LOG_FILE)).unwrap();
            store.put_batch(processing("b"), vec![], vec![], vec![]).unwrap();
            store.compact().unwrap();
        }
        // Simulate a crash between writing the snapshot and resetting the log.
        std::fs::write(dir.path().join(LOG_FILE), old_log).unwrap();
        let store = Store::open(dir.path()).unwrap();
        assert!(store.get_document("a").is_none());
        assert!(store.get_document("b").is_some());
    }

    #[test]
    fn newer_format_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        drop(Store::open(dir.path()).unwrap());
        let path = dir.path().join(LOG_FILE);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            Store::open(dir.path()),
            Err(StoreError::UnsupportedVersion { .. })
        ));
    }

    #[test]
    fn upload_time_is_rfc3339_utc() {
        let doc = DocumentRecord::new("d", "d.txt");
        let json = serde_json::to_value(&doc).unwrap();
        let s = json["upload_time"].as_str().unwrap();
        assert!(s.ends_with('Z'), "{s}");
        let back: DocumentRecord = serde_json::from_value(json).unwrap();
        assert_eq!(back, doc);
    }
}
