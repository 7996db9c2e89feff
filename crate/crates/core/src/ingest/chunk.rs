use serde::{Deserialize, Serialize};

use super::ExtractedPage;

/// Hard segment length in Unicode scalar values.
pub const CHUNK_SIZE: usize = 3000;
/// Segments shorter than this are dropped.
pub const MIN_CHUNK_SIZE: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub chunk_id: String,
    pub parent_doc_id: String,
    pub page_number: u32,
    /// Offset of the first character of this chunk in the page text, in characters.
    pub char_start: usize,
    pub text: String,
    pub text_processed: bool,
}

pub fn chunk_id(doc_id: &str, page: u32, ordinal: usize) -> String {
    format!("{doc_id}:{page}:{ordinal}")
}

/// Splits a page into consecutive 3000-character segments with no overlap.
/// A trailing segment under 100 characters is discarded.
pub fn chunk_page(page: &ExtractedPage, parent_doc_id: &str) -> Vec<ChunkRecord> {
    let text = &page.text;
    // Byte offset of every CHUNK_SIZE-th char, plus the end of the text.
    let mut cuts: Vec<(usize, usize)> = text
        .char_indices()
        .enumerate()
        .filter(|(n, _)| n % CHUNK_SIZE == 0)
        .map(|(n, (byte, _))| (n, byte))
        .collect();
    let total_chars = text.chars().count();
    cuts.push((total_chars, text.len()));

    cuts.windows(2)
        .filter(|w| w[1].0 - w[0].0 >= MIN_CHUNK_SIZE)
        .enumerate()
        .map(|(ordinal, w)| ChunkRecord {
            chunk_id: chunk_id(parent_doc_id, page.page_number, ordinal),
            parent_doc_id: parent_doc_id.to_string(),
            page_number: page.page_number,
            char_start: w[0].0,
            text: text[w[0].1..w[1].1].to_string(),
            text_processed: true,
        })
        .collect()
}
