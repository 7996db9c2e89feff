//! A scripted language server for tests and demos.
//!
//! The script is JSON:
//!
//! ```json
//! {
//!   "capabilities": {"definitionProvider": true, "referencesProvider": true},
//!   "initialize_delay_ms": 0,
//!   "require_open": true,
//!   "ignore_shutdown": false,
//!   "write_chunk": 7,
//!   "server_requests": [{"method": "workspace/configuration", "params": {"items": [{}]}}],
//!   "responses": {
//!     "textDocument/definition": [
//!       {"when": {"position": {"line": 10, "character": 4}}, "result": [], "delay_ms": 0}
//!     ]
//!   }
//! }
//! ```
//!
//! A rule matches when `when` is a structural subset of the request params.
//! Rules with `delay_ms` reply from a separate thread, so later requests can
//! be answered first.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, Read, Write};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::framing::{encode_message, MessageReader};

#[derive(Debug, Clone, Deserialize)]
pub struct RuleError {
    pub code: i64,
    pub message: String,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(default)]
    pub when: Option<Value>,
    #[serde(default)]
    pub result: Value,
    #[serde(default)]
    pub error: Option<RuleError>,
    #[serde(default)]
    pub delay_ms: u64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub capabilities: Value,
    #[serde(default)]
    pub initialize_delay_ms: u64,
    #[serde(default)]
    pub require_open: bool,
    #[serde(default)]
    pub ignore_shutdown: bool,
    /// Split every outgoing frame into writes of this many bytes.
    #[serde(default)]
    pub write_chunk: Option<usize>,
    #[serde(default)]
    pub server_requests: Vec<Value>,
    #[serde(default)]
    pub responses: BTreeMap<String, Vec<MockRule>>,
}

impl MockScript {
    pub fn full_capabilities() -> Value {
        json!({
            "definitionProvider": true,
            "referencesProvider": true,
            "documentSymbolProvider": true
        })
    }
}

/// `pattern` is contained in `value`: objects by key subset, everything
/// else by equality.
pub fn json_subset(pattern: &Value, value: &Value) -> bool {
    match (pattern, value) {
        (Value::Object(p), Value::Object(v)) => p
            .iter()
            .all(|(k, pv)| v.get(k).is_some_and(|vv| json_subset(pv, vv))),
        _ => pattern == value,
    }
}

type SharedOut = Arc<Mutex<Box<dyn Write + Send>>>;

fn send(out: &SharedOut, chunk: Option<usize>, message: &Value) {
    let bytes = encode_message(message);
    let mut w = out.lock().unwrap();
    let step = chunk.filter(|&n| n > 0).unwrap_or(bytes.len().max(1));
    for piece in bytes.chunks(step) {
        if w.write_all(piece).and_then(|()| w.flush()).is_err() {
            return;
        }
    }
}

/// Runs a script over a byte stream pair. Every received message is
/// appended to the returned log.
pub struct MockServer {
    script: MockScript,
    log: Arc<Mutex<Vec<Value>>>,
}

impl MockServer {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            log: Arc::default(),
        }
    }

    pub fn log(&self) -> Arc<Mutex<Vec<Value>>> {
        self.log.clone()
    }

    pub fn run(self, input: impl Read, output: impl Write + Send + 'static) -> io::Result<()> {
        let out: SharedOut = Arc::new(Mutex::new(Box::new(output)));
        let mut reader = MessageReader::new(input);
        let mut opened: HashSet<String> = HashSet::new();
        let mut delayed: Vec<JoinHandle<()>> = Vec::new();
        let mut next_server_id = 10_000;
        let chunk = self.script.write_chunk;

        while let Some(message) = reader
            .read_message()
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?
        {
            self.log.lock().unwrap().push(message.clone());
            let Some(method) = message.get("method").and_then(Value::as_str) else {
                continue; // reply to one of our requests
            };
            let params = message.get("params").cloned().unwrap_or(Value::Null);
            let Some(id) = message.get("id").cloned() else {
                match method {
                    "textDocument/didOpen" => {
                        if let Some(uri) = params.pointer("/textDocument/uri").and_then(Value::as_str) {
                            opened.insert(uri.to_string());
                        }
                    }
                    "textDocument/didClose" => {
                        if let Some(uri) = params.pointer("/textDocument/uri").and_then(Value::as_str) {
                            opened.remove(uri);
                        }
                    }
                    "initialized" => {
                        for request in &self.script.server_requests {
                            let mut request = request.clone();
                            request["jsonrpc"] = json!("2.0");
                            request["id"] = json!(next_server_id);
                            next_server_id += 1;
                            send(&out, chunk, &request);
                        }
                    }
                    "exit" if !self.script.ignore_shutdown => break,
                    _ => {}
                }
                continue;
            };

            let reply = match method {
                "initialize" => {
                    std::thread::sleep(Duration::from_millis(self.script.initialize_delay_ms));
                    json!({"jsonrpc": "2.0", "id": id, "result": {
                        "capabilities": self.script.capabilities,
                        "serverInfo": {"name": "mock-lsp"}
                    }})
                }
                "shutdown" if self.script.ignore_shutdown => continue,
                "shutdown" => json!({"jsonrpc": "2.0", "id": id, "result": null}),
                _ => {
                    let uri = params.pointer("/textDocument/uri").and_then(Value::as_str);
                    if self.script.require_open && uri.is_some_and(|u| !opened.contains(u)) {
                        json!({"jsonrpc": "2.0", "id": id, "error": {
                            "code": -32001, "message": format!("document not open: {}", uri.unwrap_or(""))
                        }})
                    } else {
                        let rule = self.script.responses.get(method).and_then(|rules| {
                            rules
                                .iter()
                                .find(|r| r.when.as_ref().is_none_or(|w| json_subset(w, &params)))
                        });
                        match rule {
                            None => json!({"jsonrpc": "2.0", "id": id, "error": {
                                "code": -32601, "message": format!("unhandled method {method}")
                            }}),
                            Some(rule) => {
                                let reply = match &rule.error {
                                    Some(e) => json!({"jsonrpc": "2.0", "id": id, "error": {
                                        "code": e.code, "message": e.message
                                    }}),
                                    None => json!({"jsonrpc": "2.0", "id": id, "result": rule.result}),
                                };
                                if rule.delay_ms > 0 {
                                    let (out, delay) = (out.clone(), rule.delay_ms);
                                    delayed.push(std::thread::spawn(move || {
                                        std::thread::sleep(Duration::from_millis(delay));
                                        send(&out, chunk, &reply);
                                    }));
                                    continue;
                                }
                                reply
                            }
                        }
                    }
                }
            };
            send(&out, chunk, &reply);
        }
        for handle in delayed {
            let _ = handle.join();
        }
        Ok(())
    }
}

/// A mock running on a background thread, connected through OS pipes.
pub struct InProcessMock {
    /// Read server output here.
    pub from_server: io::PipeReader,
    /// Write client messages here.
    pub to_server: io::PipeWriter,
    pub log: Arc<Mutex<Vec<Value>>>,
    pub handle: JoinHandle<io::Result<()>>,
}

pub fn spawn_in_process(script: MockScript) -> io::Result<InProcessMock> {
    let (server_in, to_server) = io::pipe()?;
    let (from_server, server_out) = io::pipe()?;
    let server = MockServer::new(script);
    let log = server.log();
    let handle = std::thread::Builder::new()
        .name("mock-lsp".into())
        .spawn(move || server.run(server_in, server_out))?;
    Ok(InProcessMock {
        from_server,
        to_server,
        log,
        handle,
    })
}
