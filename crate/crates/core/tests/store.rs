mod common;

use std::fs;
use std::path::Path;

use gs_core::ingest::{ChunkRecord, UploadRequest};
use gs_core::store::{DocumentRecord, DocumentStatus, FigureRecord, Store, StoreError, TableRecord};
use gs_core::{Engine, SearchQuery, SearchResponse};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const QUERIES: &[&str] = &[
    "synchronization signal",
    "primary synchronization",
    "timing recovery procedure",
    "beam measurement report",
    "of the",
    "physical broadcast channel",
    "paging",
    "preamble random access",
];

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), to.join(entry.file_name())).unwrap();
    }
}

/// Every query through every tier and through the full search path.
fn observe(engine: &Engine) -> (Vec<Vec<(String, u64)>>, Vec<SearchResponse>) {
    let analyzer = engine.analyzer();
    let raw = engine.with_index(|index| {
        let mut out = Vec::new();
        for q in QUERIES {
            let tokens = analyzer.analyze(q);
            let terms: Vec<String> = tokens.iter().map(|t| t.text.clone()).collect();
            for hits in [index.query_phrase(&tokens), index.query_all(&terms), index.query_any(&terms)] {
                out.push(hits.into_iter().map(|h| (h.chunk_ref, h.score.to_bits())).collect());
            }
        }
        out
    });
    let responses = QUERIES
        .iter()
        .map(|q| engine.search(&SearchQuery::new(*q)).unwrap())
        .collect();
    (raw, responses)
}

fn documents_of(engine: &Engine) -> Vec<DocumentRecord> {
    let mut docs = engine.list_documents();
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    docs
}

#[test]
fn reopen_reproduces_every_query_type() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = StdRng::seed_from_u64(9);
    let before = {
        let engine = common::open_engine(dir.path());
        for i in 0..4 {
            let text = common::technical_document(&mut rng, 3, 4000);
            common::ingest_text(&engine, &format!("doc{i}.txt"), &text);
        }
        let victim = common::ingest_text(&engine, "gone.txt", &common::technical_document(&mut rng, 2, 3000));
        engine.delete_document(&victim).unwrap();
        (observe(&engine), documents_of(&engine))
    };
    let engine = common::open_engine(dir.path());
    assert_eq!((observe(&engine), documents_of(&engine)), before);
    engine.check_invariants().unwrap();

    engine.store().compact().unwrap();
    drop(engine);
    let engine = common::open_engine(dir.path());
    assert_eq!((observe(&engine), documents_of(&engine)), before);
    engine.check_invariants().unwrap();
}

/// Kills the process at random byte offsets inside the log region written
/// by one ingestion, by truncating the log there, and reopens.
#[test]
fn ingestion_is_all_or_nothing_at_random_crash_points() {
    let base = tempfile::tempdir().unwrap();
    let mut rng = StdRng::seed_from_u64(2024);
    let fixture = serde_json::json!({
        "filename": "late.json",
        "pages": [
            {"page_number": 1, "text": common::technical_document(&mut rng, 1, 6500)},
            {"page_number": 2, "text": common::technical_document(&mut rng, 1, 900),
             "figures": [{"bbox": [0, 0, 200, 200], "width_px": 300, "height_px": 300,
                          "nearby_texts": [{"text": "Figure 1", "bbox": [0, 210, 100, 220]}]}],
             "tables": [{"cells": [["a", "b"], ["c", "d"]]}]}
        ]
    });
    let (baseline, start) = {
        let engine = common::open_engine(base.path());
        for i in 0..3 {
            common::ingest_text(&engine, &format!("base{i}.txt"), &common::technical_document(&mut rng, 2, 3500));
        }
        (observe(&engine), engine.store().log_len())
    };
    let complete = {
        let dir = tempfile::tempdir().unwrap();
        copy_dir(base.path(), dir.path());
        let engine = common::open_engine(dir.path());
        let outcome = engine
            .ingest_document(UploadRequest::new("late.json", serde_json::to_vec(&fixture).unwrap()))
            .unwrap();
        let entry = engine.store().document_entry(&outcome.doc_id).unwrap();
        let log = fs::read(dir.path().join("store.log")).unwrap();
        (outcome.doc_id, entry, log)
    };
    let (doc_id, full_entry, full_log) = complete;
    assert!(full_entry.chunks.len() >= 3 && !full_entry.figures.is_empty() && !full_entry.tables.is_empty());
    let end = full_log.len() as u64;

    let mut outcomes = [0usize; 3];
    for round in 0..100 {
        let cut = if round == 0 { end } else { rng.random_range(start..end) };
        let dir = tempfile::tempdir().unwrap();
        copy_dir(base.path(), dir.path());
        fs::write(dir.path().join("store.log"), &full_log[..cut as usize]).unwrap();

        let engine = common::open_engine(dir.path());
        engine.check_invariants().unwrap_or_else(|e| panic!("cut at {cut}: {e}"));
        match engine.store().document_entry(&doc_id) {
            None => outcomes[0] += 1,
            Some(entry) if entry.document.status == DocumentStatus::Failed => {
                assert!(entry.chunks.is_empty() && entry.figures.is_empty() && entry.tables.is_empty());
                outcomes[1] += 1;
            }
            Some(entry) => {
                assert_eq!(entry.document.status, DocumentStatus::Indexed, "cut at {cut}");
                assert_eq!(entry.chunks, full_entry.chunks);
                assert_eq!(entry.figures, full_entry.figures);
                assert_eq!(entry.tables, full_entry.tables);
                outcomes[2] += 1;
            }
        }
        if engine.get_document(&doc_id).is_none_or(|d| d.status != DocumentStatus::Indexed) {
            assert_eq!(observe(&engine), baseline, "cut at {cut}");
        }
        let first = (observe(&engine), documents_of(&engine));
        drop(engine);
        let again = common::open_engine(dir.path());
        assert_eq!((observe(&again), documents_of(&again)), first, "second reopen after cut at {cut}");
    }
    assert!(outcomes.iter().all(|&n| n > 0), "crash outcomes not all exercised: {outcomes:?}");
}

fn chunk(doc: &str, ord: usize) -> ChunkRecord {
    ChunkRecord {
        chunk_id: format!("{doc}:1:{ord}"),
        parent_doc_id: doc.into(),
        page_number: 1,
        char_start: ord * 3000,
        text: format!("chunk {ord} of {doc}"),
        text_processed: true,
    }
}

#[test]
fn torn_batch_frames_leave_no_partial_batch() {
    let mut rng = StdRng::seed_from_u64(77);
    for _ in 0..100 {
        let dir = tempfile::tempdir().unwrap();
        let chunks: Vec<ChunkRecord> = (0..rng.random_range(1..20)).map(|i| chunk("d", i)).collect();
        let figures = vec![FigureRecord {
            figure_id: "d:1:0".into(),
            parent_doc_id: "d".into(),
            page_number: 1,
            caption: "Figure".into(),
            ocr_text: None,
        }];
        let tables = vec![TableRecord {
            table_id: "d:1:0".into(),
            parent_doc_id: "d".into(),
            page_number: 1,
            caption: None,
            markdown: "a | b".into(),
        }];
        let frame_estimate = serde_json::to_vec(&chunks).unwrap().len() + 400;
        let crash_at = rng.random_range(0..frame_estimate);
        {
            let store = Store::open(dir.path()).unwrap();
            let mut doc = DocumentRecord::new("d", "d.txt");
            store.create_document(doc.clone()).unwrap();
            store.set_status("d", DocumentStatus::Processing, None).unwrap();
            doc.status = DocumentStatus::Processing;
            store.inject_crash_after(crash_at);
            let err = store.put_batch(doc, chunks.clone(), figures.clone(), tables.clone()).unwrap_err();
            assert!(matches!(err, StoreError::Crashed));
            assert!(matches!(store.set_status("d", DocumentStatus::Failed, Some("x".into())), Err(StoreError::Crashed)));
        }
        let store = Store::open(dir.path()).unwrap();
        store.check_integrity().unwrap();
        let entry = store.document_entry("d").unwrap();
        let all = (entry.chunks == chunks) && entry.figures == figures && entry.tables == tables;
        let none = entry.chunks.is_empty() && entry.figures.is_empty() && entry.tables.is_empty();
        assert!(all || none, "partial batch after crash at byte {crash_at}");
        // The store accepts writes again after recovery.
        store.set_status("d", DocumentStatus::Indexed, None).unwrap();
    }
}

#[test]
fn invalid_batches_are_rejected_without_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let mut doc = DocumentRecord::new("d", "d.txt");
    store.create_document(doc.clone()).unwrap();
    assert!(store.put_batch(doc.clone(), vec![chunk("d", 0)], vec![], vec![]).is_err(), "status uploaded");
    store.set_status("d", DocumentStatus::Processing, None).unwrap();
    doc.status = DocumentStatus::Processing;
    let len = store.log_len();
    assert!(store.put_batch(doc.clone(), vec![chunk("other", 0)], vec![], vec![]).is_err());
    assert!(store.put_batch(doc.clone(), vec![chunk("d", 0), chunk("d", 0)], vec![], vec![]).is_err());
    assert!(store.set_status("d", DocumentStatus::Uploaded, None).is_err());
    assert!(store.set_status("d", DocumentStatus::Failed, None).is_err());
    assert_eq!(store.log_len(), len);
    assert!(matches!(store.create_document(DocumentRecord::new("d", "d.txt")), Err(StoreError::AlreadyExists(_))));
    assert!(store.document_entry("d").unwrap().chunks.is_empty());
}
