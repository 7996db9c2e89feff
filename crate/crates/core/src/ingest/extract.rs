//! Page extraction adapters.
//!
//! The pipeline never parses document formats itself. An extractor opens a
//! payload and hands back pages one at a time.

use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ExtractedPage, RawFigure, RawTable};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("payload is not valid UTF-8 text")]
    NotUtf8,
    #[error("malformed fixture: {0}")]
    Fixture(String),
    #[error("page {0} is out of range")]
    PageOutOfRange(u32),
    #[error("no extractor configured for `{0}`")]
    Unsupported(String),
    #[error("external extractor failed: {0}")]
    Command(String),
}

pub trait PageSource: Send + Sync {
    fn page_count(&self) -> usize;
    /// `ordinal` is 1-based and ranges over `1..=page_count()`.
    fn extract_page(&self, ordinal: u32) -> Result<ExtractedPage, ExtractError>;
}

pub trait PageExtractor: Send + Sync {
    fn open(&self, payload: &[u8], markdown_mode: bool) -> Result<Box<dyn PageSource>, ExtractError>;
}

/// In-memory pages, the shape every adapter reduces to.
#[derive(Debug, Clone, Default)]
pub struct PageList(pub Vec<ExtractedPage>);

impl PageSource for PageList {
    fn page_count(&self) -> usize {
        self.0.len()
    }

    fn extract_page(&self, ordinal: u32) -> Result<ExtractedPage, ExtractError> {
        ordinal
            .checked_sub(1)
            .and_then(|i| self.0.get(i as usize))
            .cloned()
            .ok_or(ExtractError::PageOutOfRange(ordinal))
    }
}

fn pages_from_text(text: &str) -> PageList {
    PageList(
        text.split('\u{000C}')
            .enumerate()
            .map(|(i, page)| ExtractedPage {
                page_number: i as u32 + 1,
                text: page.to_string(),
                figures: Vec::new(),
                tables: Vec::new(),
            })
            .collect(),
    )
}

/// Plain text or markdown. Form feeds separate pages; without one the whole
/// file is a single page.
#[derive(Debug, Clone, Copy, Default)]
pub struct TextExtractor;

impl PageExtractor for TextExtractor {
    fn open(&self, payload: &[u8], _markdown_mode: bool) -> Result<Box<dyn PageSource>, ExtractError> {
        let text = std::str::from_utf8(payload).map_err(|_| ExtractError::NotUtf8)?;
        Ok(Box::new(pages_from_text(text)))
    }
}

/// Wire format of a pre-extracted document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureDocument {
    pub filename: String,
    pub pages: Vec<FixturePage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixturePage {
    pub page_number: u32,
    pub text: String,
    #[serde(default)]
    pub figures: Vec<RawFigure>,
    #[serde(default)]
    pub tables: Vec<FixtureTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureTable {
    pub cells: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

impl FixtureDocument {
    pub fn into_pages(self) -> Result<PageList, ExtractError> {
        let mut pages = Vec::with_capacity(self.pages.len());
        for page in self.pages {
            if page.page_number == 0 {
                return Err(ExtractError::Fixture("page_number must be >= 1".into()));
            }
            if let Some(f) = page.figures.iter().find(|f| f.width_px == 0 || f.height_px == 0) {
                return Err(ExtractError::Fixture(format!(
                    "figure on page {} has zero size {}x{}",
                    page.page_number, f.width_px, f.height_px
                )));
            }
            let tables = page
                .tables
                .into_iter()
                .map(|t| RawTable {
                    page_number: page.page_number,
                    cells: t.cells,
                    caption: t.caption,
                })
                .collect();
            pages.push(ExtractedPage {
                page_number: page.page_number,
                text: page.text,
                figures: page.figures,
                tables,
            });
        }
        Ok(PageList(pages))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FixtureExtractor;

impl PageExtractor for FixtureExtractor {
    fn open(&self, payload: &[u8], _markdown_mode: bool) -> Result<Box<dyn PageSource>, ExtractError> {
        let doc: FixtureDocument =
            serde_json::from_slice(payload).map_err(|e| ExtractError::Fixture(e.to_string()))?;
        Ok(Box::new(doc.into_pages()?))
    }
}

/// Runs an external program that reads the payload on stdin and prints
/// form-feed separated page text on stdout (for example `pdftotext - -`).
/// `markdown_args` replaces `args` when markdown mode is requested.
#[derive(Debug, Clone)]
pub struct CommandExtractor {
    pub program: String,
    pub args: Vec<String>,
    pub markdown_args: Option<Vec<String>>,
}

impl CommandExtractor {
    /// Parses a whitespace-separated command line.
    pub fn parse(command: &str) -> Option<Self> {
        let mut parts = command.split_whitespace().map(String::from);
        let program = parts.next()?;
        Some(Self {
            program,
            args: parts.collect(),
            markdown_args: None,
        })
    }
}

impl PageExtractor for CommandExtractor {
    fn open(&self, payload: &[u8], markdown_mode: bool) -> Result<Box<dyn PageSource>, ExtractError> {
        let args = match (&self.markdown_args, markdown_mode) {
            (Some(md), true) => md,
            _ => &self.args,
        };
        let mut child = Command::new(&self.program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| ExtractError::Command(format!("{}: {e}", self.program)))?;
        let mut stdin = child.stdin.take().expect("stdin is piped");
        let payload = payload.to_vec();
        let writer = std::thread::spawn(move || stdin.write_all(&payload));
        let output = child
            .wait_with_output()
            .map_err(|e| ExtractError::Command(e.to_string()))?;
        let _ = writer.join();
        if !output.status.success() {
            return Err(ExtractError::Command(format!(
                "{} exited with {}: {}",
                self.program,
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let text = String::from_utf8(output.stdout).map_err(|_| ExtractError::NotUtf8)?;
        let mut pages = pages_from_text(&text);
        // pdftotext terminates the last page with a form feed.
        if pages.0.len() > 1 && pages.0.last().is_some_and(|p| p.text.is_empty()) {
            pages.0.pop();
        }
        Ok(Box::new(pages))
    }
}

/// Picks an adapter from the filename extension.
#[derive(Debug, Clone, Default)]
pub struct AutoExtractor {
    pub pdf: Option<CommandExtractor>,
}

impl AutoExtractor {
    fn pick(&self, filename: &str) -> Result<&dyn PageExtractor, ExtractError> {
        let ext = filename
            .rsplit_once('.')
            .map(|(_, e)| e.to_ascii_lowercase())
            .unwrap_or_default();
        match ext.as_str() {
            "json" => Ok(&FixtureExtractor),
            "pdf" => self
                .pdf
                .as_ref()
                .map(|c| c as &dyn PageExtractor)
                .ok_or_else(|| ExtractError::Unsupported(filename.to_string())),
            _ => Ok(&TextExtractor),
        }
    }

    pub fn open_named(
        &self,
        filename: &str,
        payload: &[u8],
        markdown_mode: bool,
    ) -> Result<Box<dyn PageSource>, ExtractError> {
        self.pick(filename)?.open(payload, markdown_mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_splits_on_form_feed() {
        let src = TextExtractor.open(b"one\x0ctwo\x0cthree", false).unwrap();
        assert_eq!(src.page_count(), 3);
        assert_eq!(src.extract_page(2).unwrap().text, "two");
        assert_eq!(src.extract_page(3).unwrap().page_number, 3);
        assert!(matches!(src.extract_page(4), Err(ExtractError::PageOutOfRange(4))));
        assert!(matches!(src.extract_page(0), Err(ExtractError::PageOutOfRange(0))));
    }

    #[test]
    fn text_rejects_binary() {
        assert!(matches!(TextExtractor.open(&[0xff, 0xfe, 0x00], false), Err(ExtractError::NotUtf8)));
    }

    #[test]
    fn fixture_parses_documented_schema() {
        let json = br#"{
            "filename": "spec.pdf",
            "pages": [{
                "page_number": 3,
                "text": "hello",
                "figures": [{"bbox": [0, 0, 10, 10], "width_px": 120, "height_px": 150,
                             "nearby_texts": [{"text": "Figure 2", "bbox": [0, 20, 10, 30]}],
                             "ocr_text": "SSB"}],
                "tables": [{"cells": [["a", "b"]], "caption": "Table 1"}]
            }]
        }"#;
        let src = FixtureExtractor.open(json, false).unwrap();
        let page = src.extract_page(1).unwrap();
        assert_eq!(page.page_number, 3);
        assert_eq!(page.figures[0].ocr_text.as_deref(), Some("SSB"));
        assert_eq!(page.figures[0].nearby_texts[0].bbox.y0, 20.0);
        assert_eq!(page.tables[0].page_number, 3);
        assert_eq!(page.tables[0].caption.as_deref(), Some("Table 1"));
    }

    #[test]
    fn fixture_rejects_unknown_fields_and_zero_sized_figures() {
        assert!(FixtureExtractor
            .open(br#"{"filename":"x","pages":[],"extra":1}"#, false)
            .is_err());
        let zero = br#"{"filename":"x","pages":[{"page_number":1,"text":"",
            "figures":[{"bbox":[0,0,1,1],"width_px":0,"height_px":5,"nearby_texts":[]}]}]}"#;
        assert!(matches!(FixtureExtractor.open(zero, false), Err(ExtractError::Fixture(_))));
    }

    #[test]
    fn auto_extractor_dispatches_on_extension() {
        let auto = AutoExtractor::default();
        assert!(auto.open_named("notes.md", b"text", false).is_ok());
        assert!(matches!(
            auto.open_named("paper.pdf", b"%PDF", false),
            Err(ExtractError::Unsupported(_))
        ));
        assert!(matches!(
            auto.open_named("doc.JSON", b"not json", false),
            Err(ExtractError::Fixture(_))
        ));
    }

    #[test]
    fn command_extractor_pipes_payload() {
        let cat = CommandExtractor::parse("cat").unwrap();
        let src = cat.open(b"p1\x0cp2\x0c", false).unwrap();
        assert_eq!(src.page_count(), 2);
        assert_eq!(src.extract_page(2).unwrap().text, "p2");

        let missing = CommandExtractor::parse("/nonexistent/extractor").unwrap();
        assert!(matches!(missing.open(b"", false), Err(ExtractError::Command(_))));
    }
}
