use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use url::Url;

use super::LspError;

/// Zero-based line and UTF-16 character offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Position {
    pub line: u32,
    pub character: u32,
}

impl Position {
    pub fn new(line: u32, character: u32) -> Self {
        Self { line, character }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Range {
    pub start: Position,
    pub end: Position,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SymbolLocation {
    pub file_path: String,
    pub start: Position,
    pub end: Position,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentSymbol {
    pub name: String,
    pub kind: String,
    pub range: Range,
    #[serde(default)]
    pub children: Vec<DocumentSymbol>,
}

impl DocumentSymbol {
    /// 1 for a leaf.
    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(DocumentSymbol::depth).max().unwrap_or(0)
    }
}

pub fn tree_depth(symbols: &[DocumentSymbol]) -> usize {
    symbols.iter().map(DocumentSymbol::depth).max().unwrap_or(0)
}

pub fn path_to_uri(path: &Path) -> Result<String, LspError> {
    let absolute = if path.is_absolute() {
        path.to_path_buf()
    } else {
        std::env::current_dir()?.join(path)
    };
    Url::from_file_path(&absolute)
        .map(String::from)
        .map_err(|()| LspError::InvalidPath(absolute.display().to_string()))
}

pub fn uri_to_path(uri: &str) -> String {
    Url::parse(uri)
        .ok()
        .filter(|u| u.scheme() == "file")
        .and_then(|u| u.to_file_path().ok())
        .map(|p: PathBuf| p.display().to_string())
        .unwrap_or_else(|| uri.to_string())
}

fn parse<T: for<'de> Deserialize<'de>>(value: &Value) -> Result<T, LspError> {
    serde_json::from_value(value.clone()).map_err(|e| LspError::Protocol(e.to_string()))
}

fn location_from(value: &Value) -> Result<SymbolLocation, LspError> {
    // LocationLink carries targetUri/targetSelectionRange; Location has uri/range.
    let (uri, range) = if let Some(uri) = value.get("targetUri") {
        let range = value
            .get("targetSelectionRange")
            .or_else(|| value.get("targetRange"))
            .ok_or_else(|| LspError::Protocol("LocationLink without range".into()))?;
        (uri, range)
    } else {
        let uri = value
            .get("uri")
            .ok_or_else(|| LspError::Protocol(format!("not a location: {value}")))?;
        let range = value
            .get("range")
            .ok_or_else(|| LspError::Protocol("Location without range".into()))?;
        (uri, range)
    };
    let uri = uri
        .as_str()
        .ok_or_else(|| LspError::Protocol("uri is not a string".into()))?;
    let range: Range = parse(range)?;
    Ok(SymbolLocation {
        file_path: uri_to_path(uri),
        start: range.start,
        end: range.end,
    })
}

/// Accepts `null`, a single `Location`, or an array of `Location` /
/// `LocationLink`.
pub fn normalize_locations(value: &Value) -> Result<Vec<SymbolLocation>, LspError> {
    match value {
        Value::Null => Ok(Vec::new()),
        Value::Array(items) => items.iter().map(location_from).collect(),
        Value::Object(_) => Ok(vec![location_from(value)?]),
        other => Err(LspError::Protocol(format!("unexpected location payload: {other}"))),
    }
}

pub fn symbol_kind_name(kind: u64) -> &'static str {
    const NAMES: [&str; 26] = [
        "file", "module", "namespace", "package", "class", "method", "property", "field",
        "constructor", "enum", "interface", "function", "variable", "constant", "string",
        "number", "boolean", "array", "object", "key", "null", "enum_member", "struct", "event",
        "operator", "type_parameter",
    ];
    kind.checked_sub(1)
        .and_then(|i| NAMES.get(i as usize))
        .copied()
        .unwrap_or("unknown")
}

fn symbol_from(value: &Value) -> Result<DocumentSymbol, LspError> {
    let name = value
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| LspError::Protocol("symbol without name".into()))?
        .to_string();
    let kind = symbol_kind_name(value.get("kind").and_then(Value::as_u64).unwrap_or(0)).to_string();
    if let Some(location) = value.get("location") {
        // Flat SymbolInformation.
        let range: Range = parse(
            location
                .get("range")
                .ok_or_else(|| LspError::Protocol("SymbolInformation without range".into()))?,
        )?;
        return Ok(DocumentSymbol {
            name,
            kind,
            range,
            children: Vec::new(),
        });
    }
    let range: Range = parse(
        value
            .get("range")
            .ok_or_else(|| LspError::Protocol("DocumentSymbol without range".into()))?,
    )?;
    let children = match value.get("children") {
        Some(Value::Array(items)) => items.iter().map(symbol_from).collect::<Result<_, _>>()?,
        _ => Vec::new(),
    };
    Ok(DocumentSymbol {
        name,
        kind,
        range,
        children,
    })
}

/// Hierarchical responses keep their shape; flat `SymbolInformation` lists
/// become a one-level tree.
pub fn normalize_symbols(value: &Value) -> Result<Vec<DocumentSymbol>, LspError> {
    match value {
        Value::Null => Ok(Vec::new()),
        Value::Array(items) => items.iter().map(symbol_from).collect(),
        other => Err(LspError::Protocol(format!("unexpected documentSymbol payload: {other}"))),
    }
}

/// Position of the first whole-identifier occurrence of `name` in `text`,
/// with the character offset counted in UTF-16 code units.
pub fn find_identifier(text: &str, name: &str) -> Option<Position> {
    if name.is_empty() {
        return None;
    }
    let is_ident = |c: char| c.is_alphanumeric() || c == '_';
    for (line_no, line) in text.lines().enumerate() {
        let mut from = 0;
        while let Some(found) = line[from..].find(name) {
            let start = from + found;
            let end = start + name.len();
            let before_ok = line[..start].chars().next_back().is_none_or(|c| !is_ident(c));
            let after_ok = line[end..].chars().next().is_none_or(|c| !is_ident(c));
            if before_ok && after_ok {
                let character = line[..start].encode_utf16().count() as u32;
                return Some(Position::new(line_no as u32, character));
            }
            from = start + name.len().max(1);
        }
    }
    None
}
