use std::collections::{HashMap, HashSet};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicI64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::framing::{encode_message, MessageReader};
use super::types::{
    find_identifier, normalize_locations, normalize_symbols, path_to_uri, DocumentSymbol, Position,
    SymbolLocation,
};
use super::LspError;

const SHUTDOWN_GRACE: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerConfig {
    pub launch_command: Vec<String>,
    pub root_path: PathBuf,
    pub language_id: String,
    pub initialize_timeout: Duration,
    pub request_timeout: Duration,
}

impl ServerConfig {
    pub fn new(launch_command: Vec<String>, root_path: impl Into<PathBuf>, language_id: &str) -> Self {
        Self {
            launch_command,
            root_path: root_path.into(),
            language_id: language_id.to_string(),
            initialize_timeout: Duration::from_secs(30),
            request_timeout: Duration::from_secs(30),
        }
    }
}

type Reply = Result<Value, LspError>;
type Pending = Arc<Mutex<HashMap<i64, mpsc::Sender<Reply>>>>;
type SharedWriter = Arc<Mutex<Box<dyn Write + Send>>>;

/// A running language server connection.
///
/// Requests may be issued from several threads; writes are serialized and
/// responses are routed back by request id.
pub struct Session {
    config: ServerConfig,
    root: PathBuf,
    writer: SharedWriter,
    pending: Pending,
    next_id: AtomicI64,
    closed: Arc<AtomicBool>,
    shut_down: AtomicBool,
    child: Mutex<Option<Child>>,
    reader: Mutex<Option<JoinHandle<()>>>,
    capabilities: Value,
    opened: Mutex<HashSet<PathBuf>>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("language_id", &self.config.language_id)
            .field("root", &self.root)
            .finish()
    }
}

fn write_message(writer: &SharedWriter, message: &Value) -> Result<(), LspError> {
    let bytes = encode_message(message);
    let mut w = writer.lock().unwrap();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Replies to server-initiated requests with an empty result.
fn default_reply(method: &str, params: &Value) -> Value {
    match method {
        "workspace/configuration" => {
            let n = params
                .get("items")
                .and_then(Value::as_array)
                .map_or(0, Vec::len);
            Value::Array(vec![Value::Null; n])
        }
        _ => Value::Null,
    }
}

fn reader_loop(
    input: impl Read,
    writer: SharedWriter,
    pending: Pending,
    closed: Arc<AtomicBool>,
) {
    let mut reader = MessageReader::new(input);
    loop {
        let message = match reader.read_message() {
            Ok(Some(m)) => m,
            Ok(None) => break,
            Err(e) => {
                tracing::debug!(error = %e, "language server stream closed");
                break;
            }
        };
        let method = message.get("method").and_then(Value::as_str);
        let id = message.get("id");
        match (method, id) {
            (Some(method), Some(id)) => {
                let params = message.get("params").cloned().unwrap_or(Value::Null);
                let reply = json!({"jsonrpc": "2.0", "id": id, "result": default_reply(method, &params)});
                if write_message(&writer, &reply).is_err() {
                    break;
                }
            }
            (Some(_), None) => {}
            (None, Some(id)) => {
                let Some(id) = id.as_i64() else { continue };
                let Some(tx) = pending.lock().unwrap().remove(&id) else {
                    continue;
                };
                let reply = match message.get("error") {
                    Some(err) => Err(LspError::Server {
                        code: err.get("code").and_then(Value::as_i64).unwrap_or(0),
                        message: err
                            .get("message")
                            .and_then(Value::as_str)
                            .unwrap_or("")
                            .to_string(),
                    }),
                    None => Ok(message.get("result").cloned().unwrap_or(Value::Null)),
                };
                let _ = tx.send(reply);
            }
            (None, None) => {}
        }
    }
    closed.store(true, Ordering::SeqCst);
    for (_, tx) in pending.lock().unwrap().drain() {
        let _ = tx.send(Err(LspError::Disconnected));
    }
}

fn has_capability(caps: &Value, name: &str) -> bool {
    match caps.get(name) {
        None | Some(Value::Null) | Some(Value::Bool(false)) => false,
        Some(_) => true,
    }
}

impl Session {
    /// Spawns the server and completes the initialize handshake.
    pub fn start(config: ServerConfig) -> Result<Self, LspError> {
        let (program, args) = config
            .launch_command
            .split_first()
            .ok_or_else(|| LspError::InvalidConfig("launch command is empty".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .current_dir(&config.root_path)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| LspError::Spawn(format!("{program}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        Self::handshake(config, stdout, stdin, Some(child))
    }

    /// Runs the protocol over an existing byte stream pair.
    pub fn connect(
        config: ServerConfig,
        input: impl Read + Send + 'static,
        output: impl Write + Send + 'static,
    ) -> Result<Self, LspError> {
        Self::handshake(config, input, output, None)
    }

    fn handshake(
        config: ServerConfig,
        input: impl Read + Send + 'static,
        output: impl Write + Send + 'static,
        child: Option<Child>,
    ) -> Result<Self, LspError> {
        let writer: SharedWriter = Arc::new(Mutex::new(Box::new(output)));
        let pending: Pending = Arc::default();
        let closed = Arc::new(AtomicBool::new(false));
        let reader = {
            let (w, p, c) = (writer.clone(), pending.clone(), closed.clone());
            std::thread::Builder::new()
                .name("lsp-reader".into())
                .spawn(move || reader_loop(input, w, p, c))?
        };
        let root = config
            .root_path
            .canonicalize()
            .unwrap_or_else(|_| config.root_path.clone());
        let mut session = Self {
            config,
            root,
            writer,
            pending,
            next_id: AtomicI64::new(1),
            closed,
            shut_down: AtomicBool::new(false),
            child: Mutex::new(child),
            reader: Mutex::new(Some(reader)),
            capabilities: Value::Null,
            opened: Mutex::default(),
        };

        let root_uri = path_to_uri(&session.root)?;
        let params = json!({
            "processId": std::process::id(),
            "rootUri": root_uri,
            "rootPath": session.root.display().to_string(),
            "workspaceFolders": [{"uri": root_uri, "name": "workspace"}],
            "capabilities": {
                "textDocument": {
                    "definition": {"linkSupport": true},
                    "references": {},
                    "documentSymbol": {"hierarchicalDocumentSymbolSupport": true}
                }
            }
        });
        let result = match session.request_with_timeout(
            "initialize",
            params,
            session.config.initialize_timeout,
        ) {
            Ok(r) => r,
            Err(e) => {
                session.kill();
                return Err(e);
            }
        };
        session.capabilities = result.get("capabilities").cloned().unwrap_or(Value::Null);

        let missing: Vec<String> = ["definitionProvider", "referencesProvider"]
            .into_iter()
            .filter(|c| !has_capability(&session.capabilities, c))
            .map(String::from)
            .collect();
        if !missing.is_empty() {
            session.shutdown();
            return Err(LspError::MissingCapabilities(missing));
        }
        session.notify("initialized", json!({}))?;
        Ok(session)
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn capabilities(&self) -> &Value {
        &self.capabilities
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    pub fn notify(&self, method: &str, params: Value) -> Result<(), LspError> {
        write_message(
            &self.writer,
            &json!({"jsonrpc": "2.0", "method": method, "params": params}),
        )
    }

    pub fn request(&self, method: &str, params: Value) -> Result<Value, LspError> {
        self.request_with_timeout(method, params, self.config.request_timeout)
    }

    fn request_with_timeout(
        &self,
        method: &str,
        params: Value,
        timeout: Duration,
    ) -> Result<Value, LspError> {
        if self.is_closed() {
            return Err(LspError::Disconnected);
        }
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let (tx, rx) = mpsc::channel();
        self.pending.lock().unwrap().insert(id, tx);
        let message = json!({"jsonrpc": "2.0", "id": id, "method": method, "params": params});
        if let Err(e) = write_message(&self.writer, &message) {
            self.pending.lock().unwrap().remove(&id);
            return Err(e);
        }
        let started = Instant::now();
        match rx.recv_timeout(timeout) {
            Ok(reply) => reply,
            Err(RecvTimeoutError::Timeout) => {
                self.pending.lock().unwrap().remove(&id);
                Err(LspError::Timeout {
                    method: method.to_string(),
                    elapsed: started.elapsed(),
                })
            }
            Err(RecvTimeoutError::Disconnected) => Err(LspError::Disconnected),
        }
    }

    /// Resolves `file` against the workspace root and rejects paths outside it.
    pub fn resolve(&self, file: &Path) -> Result<PathBuf, LspError> {
        let joined = if file.is_absolute() {
            file.to_path_buf()
        } else {
            self.root.join(file)
        };
        let path = joined
            .canonicalize()
            .map_err(|e| LspError::InvalidPath(format!("{}: {e}", joined.display())))?;
        if !path.starts_with(&self.root) {
            return Err(LspError::OutsideRoot(path.display().to_string()));
        }
        Ok(path)
    }

    /// Sends `didOpen` the first time a file is touched.
    fn ensure_open(&self, path: &Path) -> Result<String, LspError> {
        let uri = path_to_uri(path)?;
        let mut opened = self.opened.lock().unwrap();
        if !opened.contains(path) {
            let text = std::fs::read_to_string(path)?;
            self.notify(
                "textDocument/didOpen",
                json!({"textDocument": {
                    "uri": uri,
                    "languageId": self.config.language_id,
                    "version": 1,
                    "text": text
                }}),
            )?;
            opened.insert(path.to_path_buf());
        }
        Ok(uri)
    }

    pub fn is_open(&self, file: &Path) -> bool {
        self.resolve(file)
            .map(|p| self.opened.lock().unwrap().contains(&p))
            .unwrap_or(false)
    }

    fn position_request(&self, method: &str, file: &Path, position: Position, extra: Option<Value>) -> Result<Value, LspError> {
        let path = self.resolve(file)?;
        let uri = self.ensure_open(&path)?;
        let mut params = json!({"textDocument": {"uri": uri}, "position": position});
        if let Some(extra) = extra {
            params["context"] = extra;
        }
        self.request(method, params)
    }

    pub fn definition(&self, file: &Path, position: Position) -> Result<Vec<SymbolLocation>, LspError> {
        let result = self.position_request("textDocument/definition", file, position, None)?;
        normalize_locations(&result)
    }

    /// References sorted by file path, then start position.
    pub fn references(
        &self,
        file: &Path,
        position: Position,
        include_declaration: bool,
    ) -> Result<Vec<SymbolLocation>, LspError> {
        let result = self.position_request(
            "textDocument/references",
            file,
            position,
            Some(json!({"includeDeclaration": include_declaration})),
        )?;
        let mut locations = normalize_locations(&result)?;
        locations.sort();
        Ok(locations)
    }

    pub fn document_symbols(&self, file: &Path) -> Result<Vec<DocumentSymbol>, LspError> {
        let path = self.resolve(file)?;
        let uri = self.ensure_open(&path)?;
        let result = self.request("textDocument/documentSymbol", json!({"textDocument": {"uri": uri}}))?;
        normalize_symbols(&result)
    }

    /// Position of the first whole-word occurrence of `symbol` in `file`.
    pub fn locate_symbol(&self, file: &Path, symbol: &str) -> Result<Position, LspError> {
        let path = self.resolve(file)?;
        let text = std::fs::read_to_string(&path)?;
        find_identifier(&text, symbol).ok_or_else(|| LspError::SymbolNotFound {
            symbol: symbol.to_string(),
            file: path.display().to_string(),
        })
    }

    pub fn definition_of(&self, file: &Path, symbol: &str) -> Result<Vec<SymbolLocation>, LspError> {
        let position = self.locate_symbol(file, symbol)?;
        self.definition(file, position)
    }

    pub fn references_of(
        &self,
        file: &Path,
        symbol: &str,
        include_declaration: bool,
    ) -> Result<Vec<SymbolLocation>, LspError> {
        let position = self.locate_symbol(file, symbol)?;
        self.references(file, position, include_declaration)
    }

    /// Sends shutdown and exit, then reaps the child, killing it if it has
    /// not exited within a short grace period. Safe to call more than once.
    pub fn shutdown(&self) {
        if self.shut_down.swap(true, Ordering::SeqCst) {
            return;
        }
        if !self.is_closed() {
            let timeout = self.config.request_timeout.min(SHUTDOWN_GRACE);
            let _ = self.request_with_timeout("shutdown", Value::Null, timeout);
            let _ = self.notify("exit", Value::Null);
        }
        // Closing our end of the pipe also signals the server.
        *self.writer.lock().unwrap() = Box::new(io::sink());
        self.reap();
    }

    fn kill(&self) {
        self.shut_down.store(true, Ordering::SeqCst);
        *self.writer.lock().unwrap() = Box::new(io::sink());
        if let Some(child) = self.child.lock().unwrap().as_mut() {
            let _ = child.kill();
        }
        self.reap();
    }

    fn reap(&self) {
        let Some(mut child) = self.child.lock().unwrap().take() else {
            return;
        };
        let deadline = Instant::now() + SHUTDOWN_GRACE;
        loop {
            match child.try_wait() {
                Ok(Some(_)) => break,
                Ok(None) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(10)),
                _ => {
                    let _ = child.kill();
                    let _ = child.wait();
                    break;
                }
            }
        }
        // With the child gone its stdout is closed, so the reader ends.
        if let Some(handle) = self.reader.lock().unwrap().take() {
            let _ = handle.join();
        }
    }

    /// Exit status of the child, once reaped. Test hook.
    #[doc(hidden)]
    pub fn child_running(&self) -> bool {
        self.child
            .lock()
            .unwrap()
            .as_mut()
            .is_some_and(|c| matches!(c.try_wait(), Ok(None)))
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.shutdown();
    }
}
