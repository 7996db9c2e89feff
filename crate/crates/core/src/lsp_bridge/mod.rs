//! Language Server Protocol client used for semantic code lookups.

pub mod framing;
pub mod mock;
pub mod session;
pub mod types;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

pub use session::{ServerConfig, Session};
pub use types::{DocumentSymbol, Position, Range, SymbolLocation};

#[derive(Debug, Error)]
pub enum LspError {
    #[error("invalid server config: {0}")]
    InvalidConfig(String),
    #[error("failed to spawn language server: {0}")]
    Spawn(String),
    #[error("`{method}` timed out after {elapsed:?}")]
    Timeout { method: String, elapsed: Duration },
    #[error("server lacks required capabilities: {}", .0.join(", "))]
    MissingCapabilities(Vec<String>),
    #[error("server error {code}: {message}")]
    Server { code: i64, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("language server connection closed")]
    Disconnected,
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("path is outside the workspace root: {0}")]
    OutsideRoot(String),
    #[error("symbol `{symbol}` not found in {file}")]
    SymbolNotFound { symbol: String, file: String },
    #[error("no language server configured for {0}")]
    NoServer(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServerSection {
    command: Vec<String>,
    root: PathBuf,
    #[serde(default)]
    extensions: Vec<String>,
    initialize_timeout_ms: Option<u64>,
    request_timeout_ms: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
struct ConfigFile {
    #[serde(default)]
    lsp: BTreeMap<String, ServerSection>,
}

/// One configured server and the file extensions it handles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LspServerEntry {
    pub config: ServerConfig,
    pub extensions: Vec<String>,
}

/// Parses `[lsp.<language_id>]` sections. Other top-level tables are ignored.
///
/// ```toml
/// [lsp.rust]
/// command = ["rust-analyzer"]
/// root = "/work/project"
/// extensions = ["rs"]
/// ```
pub fn parse_lsp_config(text: &str) -> Result<Vec<LspServerEntry>, LspError> {
    let file: ConfigFile =
        toml::from_str(text).map_err(|e| LspError::InvalidConfig(e.to_string()))?;
    file.lsp
        .into_iter()
        .map(|(language_id, s)| {
            if s.command.is_empty() {
                return Err(LspError::InvalidConfig(format!(
                    "lsp.{language_id}: command is empty"
                )));
            }
            let mut config = ServerConfig::new(s.command, s.root, &language_id);
            if let Some(ms) = s.initialize_timeout_ms {
                config.initialize_timeout = Duration::from_millis(ms);
            }
            if let Some(ms) = s.request_timeout_ms {
                config.request_timeout = Duration::from_millis(ms);
            }
            let extensions = if s.extensions.is_empty() {
                vec![language_id.clone()]
            } else {
                s.extensions
            };
            Ok(LspServerEntry { config, extensions })
        })
        .collect()
}

struct PoolSlot {
    entry: LspServerEntry,
    session: Mutex<Option<Arc<Session>>>,
}

/// Lazily started sessions, one per configured server.
pub struct LspPool {
    slots: Vec<PoolSlot>,
}

impl std::fmt::Debug for LspPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list()
            .entries(self.slots.iter().map(|s| &s.entry.config.language_id))
            .finish()
    }
}

impl LspPool {
    pub fn new(entries: Vec<LspServerEntry>) -> Self {
        Self {
            slots: entries
                .into_iter()
                .map(|entry| PoolSlot {
                    entry,
                    session: Mutex::new(None),
                })
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &LspServerEntry> {
        self.slots.iter().map(|s| &s.entry)
    }

    /// The session for the server whose extensions cover `file`; with a
    /// single configured server, that server handles every file.
    pub fn session_for(&self, file: &Path) -> Result<Arc<Session>, LspError> {
        let ext = file.extension().and_then(|e| e.to_str()).unwrap_or("");
        let slot = self
            .slots
            .iter()
            .find(|s| s.entry.extensions.iter().any(|e| e == ext))
            .or(if self.slots.len() == 1 { self.slots.first() } else { None })
            .ok_or_else(|| LspError::NoServer(file.display().to_string()))?;
        let mut guard = slot.session.lock().unwrap();
        if let Some(session) = guard.as_ref().filter(|s| !s.is_closed()) {
            return Ok(session.clone());
        }
        let session = Arc::new(Session::start(slot.entry.config.clone())?);
        *guard = Some(session.clone());
        Ok(session)
    }

    pub fn shutdown(&self) {
        for slot in &self.slots {
            if let Some(session) = slot.session.lock().unwrap().take() {
                session.shutdown();
            }
        }
    }
}

impl Drop for LspPool {
    fn drop(&mut self) {
        self.shutdown();
    }
}
