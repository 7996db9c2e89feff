use serde::{Deserialize, Serialize};

use super::{ExtractedPage, IngestError, RawFigure, RawTable};
use crate::store::{FigureRecord, TableRecord};

/// Minimum figure width and height in pixels.
pub const MIN_FIGURE_PX: u32 = 100;
/// Maximum distance between a figure and a caption candidate, in page units.
pub const CAPTION_DISTANCE: f64 = 100.0;

/// Axis-aligned rectangle `[x0, y0, x1, y1]` in page coordinates, y growing downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            x0: x0.min(x1),
            y0: y0.min(y1),
            x1: x0.max(x1),
            y1: y0.max(y1),
        }
    }

    pub fn expand(&self, by: f64) -> Rect {
        Rect::new(self.x0 - by, self.y0 - by, self.x1 + by, self.y1 + by)
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x0 <= other.x1 && other.x0 <= self.x1 && self.y0 <= other.y1 && other.y0 <= self.y1
    }
}

impl From<[f64; 4]> for Rect {
    fn from(v: [f64; 4]) -> Self {
        Rect::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Rect> for [f64; 4] {
    fn from(r: Rect) -> Self {
        [r.x0, r.y0, r.x1, r.y1]
    }
}

pub fn figure_is_large_enough(figure: &RawFigure) -> bool {
    figure.width_px >= MIN_FIGURE_PX && figure.height_px >= MIN_FIGURE_PX
}

/// Joins the nearby text blocks that touch the figure box grown by
/// [`CAPTION_DISTANCE`], top to bottom.
pub fn detect_caption(figure: &RawFigure) -> String {
    let zone = figure.bbox.expand(CAPTION_DISTANCE);
    let mut near: Vec<_> = figure
        .nearby_texts
        .iter()
        .filter(|t| zone.intersects(&t.bbox))
        .collect();
    near.sort_by(|a, b| {
        a.bbox
            .y0
            .total_cmp(&b.bbox.y0)
            .then(a.bbox.x0.total_cmp(&b.bbox.x0))
    });
    near.iter()
        .map(|t| t.text.trim())
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn extract_figures(page: &ExtractedPage, parent_doc_id: &str) -> Vec<FigureRecord> {
    page.figures
        .iter()
        .filter(|f| figure_is_large_enough(f))
        .enumerate()
        .map(|(ordinal, f)| FigureRecord {
            figure_id: super::chunk::chunk_id(parent_doc_id, page.page_number, ordinal),
            parent_doc_id: parent_doc_id.to_string(),
            page_number: page.page_number,
            caption: detect_caption(f),
            ocr_text: f.ocr_text.clone(),
        })
        .collect()
}

/// Renders a grid as `a | b` rows joined by newlines. Literal pipes are
/// escaped as `\|`; short rows are padded with empty cells.
pub fn table_to_markdown(table: &RawTable) -> Result<String, IngestError> {
    let width = table.cells.iter().map(Vec::len).max().unwrap_or(0);
    if width == 0 {
        return Err(IngestError::EmptyTable);
    }
    let rows: Vec<String> = table
        .cells
        .iter()
        .map(|row| {
            (0..width)
                .map(|i| row.get(i).map_or(String::new(), |c| c.replace('|', "\\|")))
                .collect::<Vec<_>>()
                .join(" | ")
        })
        .collect();
    Ok(rows.join("\n"))
}

pub fn extract_tables(page: &ExtractedPage, parent_doc_id: &str) -> Vec<TableRecord> {
    page.tables
        .iter()
        .filter_map(|t| match table_to_markdown(t) {
            Ok(markdown) => Some((t, markdown)),
            Err(_) => {
                tracing::debug!(page = page.page_number, "skipping empty table");
                None
            }
        })
        .enumerate()
        .map(|(ordinal, (t, markdown))| TableRecord {
            table_id: super::chunk::chunk_id(parent_doc_id, page.page_number, ordinal),
            parent_doc_id: parent_doc_id.to_string(),
            page_number: page.page_number,
            caption: t.caption.clone(),
            markdown,
        })
        .collect()
}
