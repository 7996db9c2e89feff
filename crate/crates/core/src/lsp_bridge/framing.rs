//! LSP base protocol framing: `Content-Length` headers, `\r\n\r\n`, JSON body.

use std::io::{self, Read};

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FramingError {
    #[error("missing Content-Length header")]
    MissingLength,
    #[error("bad header line: {0:?}")]
    BadHeader(String),
    #[error("invalid JSON body: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

pub fn encode_message(message: &Value) -> Vec<u8> {
    let body = serde_json::to_vec(message).expect("JSON values always serialize");
    let mut out = format!("Content-Length: {}\r\n\r\n", body.len()).into_bytes();
    out.extend_from_slice(&body);
    out
}

/// Incremental decoder that accepts bytes in arbitrary pieces.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Decodes the next complete message, if the buffer holds one.
    pub fn next_message(&mut self) -> Result<Option<Value>, FramingError> {
        let Some(header_end) = self.buf.windows(4).position(|w| w == b"\r\n\r\n") else {
            return Ok(None);
        };
        let header = std::str::from_utf8(&self.buf[..header_end])
            .map_err(|_| FramingError::BadHeader("non-UTF-8 header".into()))?;
        let mut length = None;
        for line in header.split("\r\n") {
            let (name, value) = line
                .split_once(':')
                .ok_or_else(|| FramingError::BadHeader(line.to_string()))?;
            if name.trim().eq_ignore_ascii_case("content-length") {
                length = Some(
                    value
                        .trim()
                        .parse::<usize>()
                        .map_err(|_| FramingError::BadHeader(line.to_string()))?,
                );
            }
        }
        let length = length.ok_or(FramingError::MissingLength)?;
        let body_start = header_end + 4;
        if self.buf.len() < body_start + length {
            return Ok(None);
        }
        let message = serde_json::from_slice(&self.buf[body_start..body_start + length]);
        self.buf.drain(..body_start + length);
        Ok(Some(message?))
    }
}

/// Blocking reader on top of [`FrameDecoder`].
pub struct MessageReader<R> {
    inner: R,
    decoder: FrameDecoder,
    chunk: Vec<u8>,
}

impl<R: Read> MessageReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            decoder: FrameDecoder::new(),
            chunk: vec![0; 8192],
        }
    }

    /// `Ok(None)` on a clean end of stream between messages.
    pub fn read_message(&mut self) -> Result<Option<Value>, FramingError> {
        loop {
            if let Some(message) = self.decoder.next_message()? {
                return Ok(Some(message));
            }
            let n = self.inner.read(&mut self.chunk)?;
            if n == 0 {
                return if self.decoder.buffered() == 0 {
                    Ok(None)
                } else {
                    Err(FramingError::Io(io::Error::new(
                        io::ErrorKind::UnexpectedEof,
                        "stream ended inside a message",
                    )))
                };
            }
            self.decoder.push(&self.chunk[..n]);
        }
    }
}
