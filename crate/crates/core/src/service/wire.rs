//! JSON shapes used on the HTTP API and by the search tool.

use serde::{Deserialize, Serialize};

use crate::search::{SearchQuery, SearchResponse, SearchResult, Tier};

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SearchRequest {
    pub query: String,
    #[serde(default)]
    pub max_results: Option<usize>,
    #[serde(default)]
    pub doc_ids: Option<Vec<String>>,
}

impl SearchRequest {
    pub fn into_query(self) -> Result<SearchQuery, String> {
        if self.query.trim().is_empty() {
            return Err("query must be a non-empty string".into());
        }
        let mut query = SearchQuery::new(self.query);
        match self.max_results {
            Some(0) => return Err("max_results must be at least 1".into()),
            Some(n) => query = query.with_max_results(n),
            None => {}
        }
        if let Some(ids) = self.doc_ids {
            query = query.with_doc_filter(ids);
        }
        Ok(query)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireSnippet {
    pub page: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireFigure {
    pub page: u32,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ocr_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireTable {
    pub page: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    pub markdown: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireResult {
    pub doc_id: String,
    pub filename: String,
    pub score: f64,
    pub pages: Vec<u32>,
    pub snippets: Vec<WireSnippet>,
    pub figures: Vec<WireFigure>,
    pub tables: Vec<WireTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireResponse {
    pub tier: Tier,
    pub results: Vec<WireResult>,
}

impl From<SearchResult> for WireResult {
    fn from(r: SearchResult) -> Self {
        Self {
            doc_id: r.parent_doc_id,
            filename: r.filename,
            score: r.score,
            pages: r.matched_pages,
            snippets: r
                .snippets
                .into_iter()
                .map(|s| WireSnippet {
                    page: s.page_number,
                    text: s.text,
                })
                .collect(),
            figures: r
                .figures
                .into_iter()
                .map(|f| WireFigure {
                    page: f.page_number,
                    caption: f.caption,
                    ocr_text: f.ocr_text,
                })
                .collect(),
            tables: r
                .tables
                .into_iter()
                .map(|t| WireTable {
                    page: t.page_number,
                    caption: t.caption,
                    markdown: t.markdown,
                })
                .collect(),
        }
    }
}

impl From<SearchResponse> for WireResponse {
    fn from(r: SearchResponse) -> Self {
        Self {
            tier: r.tier,
            results: r.results.into_iter().map(WireResult::from).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadAccepted {
    pub doc_id: String,
    pub status: String,
    pub replaced: bool,
}
