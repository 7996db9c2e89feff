//! Tool descriptors and the registry agents call into.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::wire::{SearchRequest, WireResponse};
use crate::engine::Engine;
use crate::lsp_bridge::{LspPool, Position};

pub const SEARCH_GUIDANCE: &str = "Use search_internal for queries related to internal systems, APIs, or proprietary data. \
Prefer it over answering from memory whenever the answer should be grounded in the uploaded documents, \
and cite the returned filenames and pages.";

pub const LSP_GUIDANCE: &str = "Use LSP tools for questions about code structure, definitions, or references. \
Pass a file path relative to the workspace root and either a zero-based line/character position or a symbol name.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub parameters: Value,
    pub usage_guidance: String,
}

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("unknown tool `{0}`")]
    NotFound(String),
    #[error("tool `{0}` is already registered")]
    Duplicate(String),
    #[error("invalid arguments: {0}")]
    InvalidArguments(String),
    #[error("{0}")]
    Failed(String),
}

pub trait Tool: Send + Sync {
    fn descriptor(&self) -> ToolDescriptor;
    fn call(&self, args: &Value) -> Result<Value, ToolError>;
}

/// Tools in registration order, addressable by name.
#[derive(Default, Clone)]
pub struct ToolRegistry {
    tools: Vec<Arc<dyn Tool>>,
    by_name: HashMap<String, usize>,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// `search_internal`, plus the three LSP tools when a pool is given.
    pub fn standard(engine: Arc<Engine>, lsp: Option<Arc<LspPool>>) -> Self {
        let mut registry = Self::new();
        registry
            .register(Arc::new(SearchTool::new(engine)))
            .expect("fresh registry");
        if let Some(pool) = lsp.filter(|p| !p.is_empty()) {
            for kind in [LspToolKind::Definition, LspToolKind::References, LspToolKind::Symbols] {
                registry
                    .register(Arc::new(LspTool::new(kind, pool.clone())))
                    .expect("distinct names");
            }
        }
        registry
    }

    pub fn register(&mut self, tool: Arc<dyn Tool>) -> Result<(), ToolError> {
        let name = tool.descriptor().name;
        if self.by_name.contains_key(&name) {
            return Err(ToolError::Duplicate(name));
        }
        self.by_name.insert(name, self.tools.len());
        self.tools.push(tool);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.tools.iter().map(|t| t.descriptor().name).collect()
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn Tool>> {
        self.by_name.get(name).map(|&i| self.tools[i].clone())
    }

    pub fn descriptors(&self) -> Vec<ToolDescriptor> {
        self.tools.iter().map(|t| t.descriptor()).collect()
    }

    pub fn call(&self, name: &str, args: &Value) -> Result<Value, ToolError> {
        self.get(name)
            .ok_or_else(|| ToolError::NotFound(name.to_string()))?
            .call(args)
    }
}

pub struct SearchTool {
    engine: Arc<Engine>,
}

impl SearchTool {
    pub fn new(engine: Arc<Engine>) -> Self {
        Self { engine }
    }
}

impl Tool for SearchTool {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "search_internal".into(),
            description: "Lexical (BM25) search over the ingested technical documents. Returns matching documents with page numbers, snippets, figures and tables.".into(),
            parameters: json!({
                "type": "object",
                "properties": {
                    "query": {"type": "string", "description": "Search text, e.g. a term, phrase or question."},
                    "max_results": {"type": "integer", "minimum": 1, "description": "Maximum number of documents (default 10)."},
                    "doc_ids": {"type": "array", "items": {"type": "string"}, "description": "Restrict the search to these documents."}
                },
                "required": ["query"],
                "additionalProperties": false
            }),
            usage_guidance: SEARCH_GUIDANCE.into(),
        }
    }

    fn call(&self, args: &Value) -> Result<Value, ToolError> {
        let request: SearchRequest = serde_json::from_value(args.clone())
            .map_err(|e| ToolError::InvalidArguments(e.to_string()))?;
        let query = request.into_query().map_err(ToolError::InvalidArguments)?;
        let response = self
            .engine
            .search(&query)
            .map_err(|e| ToolError::Failed(e.to_string()))?;
        Ok(serde_json::to_value(WireResponse::from(response)).expect("serializable"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LspToolKind {
    Definition,
    References,
    Symbols,
}

pub struct LspTool {
    kind: LspToolKind,
    pool: Arc<LspPool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LspArgs {
    file_path: PathBuf,
    line: Option<u32>,
    character: Option<u32>,
    symbol: Option<String>,
    #[serde(default)]
    include_declaration: bool,
}

impl LspTool {
    pub fn new(kind: LspToolKind, pool: Arc<LspPool>) -> Self {
        Self { kind, pool }
    }
}

fn position_schema(description: &str) -> Value {
    json!({
        "type": "object",
        "properties": {
            "file_path": {"type": "string", "description": "File path, relative to the workspace root or absolute."},
            "line": {"type": "integer", "minimum": 0, "description": "Zero-based line."},
            "character": {"type": "integer", "minimum": 0, "description": "Zero-based UTF-16 column."},
            "symbol": {"type": "string", "description": description}
        },
        "required": ["file_path"],
        "additionalProperties": false
    })
}

impl Tool for LspTool {
    fn descriptor(&self) -> ToolDescriptor {
        let (name, description, parameters) = match self.kind {
            LspToolKind::Definition => (
                "lsp_definition",
                "Find where a symbol is defined, via the language server.",
                position_schema("Symbol name to look up instead of a position; its first occurrence in the file is used."),
            ),
            LspToolKind::References => {
                let mut schema = position_schema("Symbol name to look up instead of a position; its first occurrence in the file is used.");
                schema["properties"]["include_declaration"] =
                    json!({"type": "boolean", "description": "Also return the declaration (default false)."});
                (
                    "lsp_references",
                    "List every reference to a symbol across the workspace, via the language server.",
                    schema,
                )
            }
            LspToolKind::Symbols => (
                "document_symbols",
                "Outline of the symbols (classes, functions, fields) declared in a file.",
                json!({
                    "type": "object",
                    "properties": {"file_path": {"type": "string"}},
                    "required": ["file_path"],
                    "additionalProperties": false
                }),
            ),
        };
        ToolDescriptor {
            name: name.into(),
            description: description.into(),
            parameters,
            usage_guidance: LSP_GUIDANCE.into(),
        }
    }

    fn call(&self, args: &Value) -> Result<Value, ToolError> {
        let args: LspArgs = serde_json::from_value(args.clone())
            .map_err(|e| ToolError::InvalidArguments(e.to_string()))?;
        let failed = |e: crate::lsp_bridge::LspError| ToolError::Failed(e.to_string());
        let session = self.pool.session_for(&args.file_path).map_err(failed)?;
        if self.kind == LspToolKind::Symbols {
            let symbols = session.document_symbols(&args.file_path).map_err(failed)?;
            return Ok(serde_json::to_value(symbols).expect("serializable"));
        }
        let position = match (args.line, args.character, &args.symbol) {
            (Some(line), Some(character), _) => Position::new(line, character),
            (None, None, Some(symbol)) => session.locate_symbol(&args.file_path, symbol).map_err(failed)?,
            _ => {
                return Err(ToolError::InvalidArguments(
                    "give either line and character, or symbol".into(),
                ))
            }
        };
        let locations = match self.kind {
            LspToolKind::Definition => session.definition(&args.file_path, position),
            _ => session.references(&args.file_path, position, args.include_declaration),
        }
        .map_err(failed)?;
        Ok(serde_json::to_value(locations).expect("serializable"))
    }
}
