//! Turning an uploaded document into chunk, figure and table records.
//!
//! Documents under [`PARALLEL_THRESHOLD_PAGES`] pages are processed page by
//! page on the calling thread. Longer documents are cut into contiguous
//! ranges of [`PAGES_PER_RANGE`] pages that run on a worker pool capped at
//! the CPU count. Both paths merge results in page order, so the output does
//! not depend on the plan.

pub mod chunk;
pub mod extract;
pub mod figures;

use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use md5::{Digest, Md5};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{FigureRecord, TableRecord};

pub use chunk::{chunk_page, ChunkRecord, CHUNK_SIZE, MIN_CHUNK_SIZE};
pub use extract::{
    AutoExtractor, CommandExtractor, ExtractError, FixtureDocument, FixtureExtractor, PageExtractor,
    PageList, PageSource, TextExtractor,
};
pub use figures::{extract_figures, extract_tables, table_to_markdown, Rect};

/// 100 MB.
pub const MAX_UPLOAD_BYTES: usize = 100 * 1024 * 1024;
pub const PARALLEL_THRESHOLD_PAGES: usize = 50;
pub const PAGES_PER_RANGE: u32 = 5;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("payload of {size} bytes exceeds the {limit} byte limit")]
    TooLarge { size: usize, limit: usize },
    #[error("filename must not be empty")]
    EmptyFilename,
    #[error("table has no cells")]
    EmptyTable,
    #[error("page number {0} appears more than once")]
    DuplicatePage(u32),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error("worker pool: {0}")]
    Workers(String),
}

#[derive(Debug, Clone)]
pub struct UploadRequest {
    pub filename: String,
    pub bytes: Vec<u8>,
    pub markdown_mode: bool,
}

impl UploadRequest {
    pub fn new(filename: impl Into<String>, bytes: impl Into<Vec<u8>>) -> Self {
        Self {
            filename: filename.into(),
            bytes: bytes.into(),
            markdown_mode: false,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.filename.is_empty() {
            return Err(IngestError::EmptyFilename);
        }
        check_size(self.bytes.len())
    }
}

pub fn check_size(size: usize) -> Result<(), IngestError> {
    if size > MAX_UPLOAD_BYTES {
        return Err(IngestError::TooLarge {
            size,
            limit: MAX_UPLOAD_BYTES,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearbyText {
    pub text: String,
    pub bbox: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFigure {
    pub bbox: Rect,
    pub width_px: u32,
    pub height_px: u32,
    #[serde(default)]
    pub nearby_texts: Vec<NearbyText>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ocr_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub page_number: u32,
    pub cells: Vec<Vec<String>>,
    pub caption: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedPage {
    pub page_number: u32,
    pub text: String,
    pub figures: Vec<RawFigure>,
    pub tables: Vec<RawTable>,
}

/// Lowercase hex MD5 of the filename bytes.
pub fn compute_doc_id(filename: &str) -> Result<String, IngestError> {
    if filename.is_empty() {
        return Err(IngestError::EmptyFilename);
    }
    let digest = Md5::digest(filename.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProcessingPlan {
    Sequential,
    Parallel {
        ranges: Vec<RangeInclusive<u32>>,
        workers: usize,
    },
}

pub fn plan_processing(total_pages: usize) -> ProcessingPlan {
    if total_pages < PARALLEL_THRESHOLD_PAGES {
        return ProcessingPlan::Sequential;
    }
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    parallel_plan(total_pages, cpus)
}

/// A parallel plan regardless of page count.
pub fn parallel_plan(total_pages: usize, max_workers: usize) -> ProcessingPlan {
    let total = total_pages as u32;
    let ranges: Vec<RangeInclusive<u32>> = (1..=total)
        .step_by(PAGES_PER_RANGE as usize)
        .map(|start| start..=(start + PAGES_PER_RANGE - 1).min(total))
        .collect();
    let workers = max_workers.clamp(1, ranges.len().max(1));
    ProcessingPlan::Parallel { ranges, workers }
}

/// Everything extracted from one document, ordered by (page, ordinal).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DocumentContent {
    pub total_pages: u32,
    pub chunks: Vec<ChunkRecord>,
    pub figures: Vec<FigureRecord>,
    pub tables: Vec<TableRecord>,
}

fn process_page(
    source: &dyn PageSource,
    ordinal: u32,
    doc_id: &str,
) -> Result<(u32, DocumentContent), IngestError> {
    let page = source.extract_page(ordinal)?;
    let content = DocumentContent {
        total_pages: 0,
        chunks: chunk_page(&page, doc_id),
        figures: extract_figures(&page, doc_id),
        tables: extract_tables(&page, doc_id),
    };
    Ok((page.page_number, content))
}

/// Runs extraction under `plan` and merges per-page output in page order.
pub fn process_document(
    source: &dyn PageSource,
    doc_id: &str,
    plan: &ProcessingPlan,
) -> Result<DocumentContent, IngestError> {
    let total = source.page_count() as u32;
    let per_page: Vec<(u32, DocumentContent)> = match plan {
        ProcessingPlan::Sequential => (1..=total)
            .map(|ordinal| process_page(source, ordinal, doc_id))
            .collect::<Result<_, _>>()?,
        ProcessingPlan::Parallel { ranges, workers } => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(*workers)
                .build()
                .map_err(|e| IngestError::Workers(e.to_string()))?;
            let batches: Vec<Vec<(u32, DocumentContent)>> = pool.install(|| {
                ranges
                    .par_iter()
                    .map(|range| {
                        range
                            .clone()
                            .map(|ordinal| process_page(source, ordinal, doc_id))
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .collect::<Result<_, _>>()
            })?;
            batches.into_iter().flatten().collect()
        }
    };

    let mut seen = BTreeSet::new();
    for (page, _) in &per_page {
        if !seen.insert(*page) {
            return Err(IngestError::DuplicatePage(*page));
        }
    }
    let mut per_page = per_page;
    per_page.sort_by_key(|(page, _)| *page);

    let mut out = DocumentContent {
        total_pages: total,
        ..Default::default()
    };
    for (_, content) in per_page {
        out.chunks.extend(content.chunks);
        out.figures.extend(content.figures);
        out.tables.extend(content.tables);
    }
    Ok(out)
}
