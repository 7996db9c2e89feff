//! Scripted language server speaking LSP over stdio.
//!
//! Usage: `mock-lsp <script.json>`

use std::process::ExitCode;

use gs_core::lsp_bridge::mock::{MockScript, MockServer};

fn main() -> ExitCode {
    let Some(path) = std::env::args().nth(1) else {
        eprintln!("usage: mock-lsp <script.json>");
        return ExitCode::from(2);
    };
    let script: MockScript = match std::fs::read_to_string(&path)
        .map_err(|e| e.to_string())
        .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()))
    {
        Ok(s) => s,
        Err(e) => {
            eprintln!("mock-lsp: {path}: {e}");
            return ExitCode::from(2);
        }
    };
    let stdin = std::io::stdin().lock();
    match MockServer::new(script).run(stdin, std::io::stdout()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mock-lsp: {e}");
            ExitCode::FAILURE
        }
    }
}
