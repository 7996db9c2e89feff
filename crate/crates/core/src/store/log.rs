//! On-disk framing.
//!
//! Both files start with an 8-byte magic, a little-endian `u32` format
//! version and a `u64` generation. The log then holds frames of
//! `[u32 len][u32 crc32][len bytes of JSON]`; the snapshot holds exactly one
//! frame. A log whose generation is older than the snapshot's has already
//! been folded into it.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::Path;

use super::StoreError;

pub const LOG_MAGIC: &[u8; 8] = b"GSLOG\0\0\0";
pub const SNAPSHOT_MAGIC: &[u8; 8] = b"GSSNAP\0\0";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 8 + 4 + 8;
const FRAME_HEADER_LEN: usize = 8;

pub fn encode_header(magic: &[u8; 8], generation: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&generation.to_le_bytes());
    out
}

/// Returns the generation stored in a header.
pub fn decode_header(bytes: &[u8], magic: &[u8; 8], path: &Path) -> Result<u64, StoreError> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != magic {
        return Err(StoreError::Corrupt(format!("{}: bad magic", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version > FORMAT_VERSION {
        return Err(StoreError::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    Ok(u64::from_le_bytes(bytes[12..20].try_into().unwrap()))
}

pub fn encode_frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

/// Splits `bytes` into complete, checksum-valid frames. Returns the payloads
/// and the length of the valid prefix; anything after it is a torn write.
pub fn decode_frames(bytes: &[u8]) -> (Vec<&[u8]>, usize) {
    let mut frames = Vec::new();
    let mut at = 0;
    while bytes.len() - at >= FRAME_HEADER_LEN {
        let len = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(bytes[at + 4..at + 8].try_into().unwrap());
        let start = at + FRAME_HEADER_LEN;
        let Some(end) = start.checked_add(len).filter(|e| *e <= bytes.len()) else {
            break;
        };
        let payload = &bytes[start..end];
        if crc32fast::hash(payload) != crc {
            break;
        }
        frames.push(payload);
        at = end;
    }
    (frames, at)
}

pub fn read_all(path: &Path) -> io::Result<Option<Vec<u8>>> {
    match File::open(path) {
        Ok(mut f) => {
            let mut buf = Vec::new();
            f.read_to_end(&mut buf)?;
            Ok(Some(buf))
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e),
    }
}

/// Writes `bytes` to `path` through a temporary file and an atomic rename.
pub fn write_atomically(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    sync_dir(path)
}

fn sync_dir(path: &Path) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        // Directory fsync is not supported everywhere; a failure here does not
        // invalidate the rename.
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

/// Append handle on the log file.
#[derive(Debug)]
pub struct LogWriter {
    file: File,
    len: u64,
}

impl LogWriter {
    /// Creates a fresh log containing only a header.
    pub fn create(path: &Path, generation: u64) -> io::Result<Self> {
        write_atomically(path, &encode_header(LOG_MAGIC, generation))?;
        Self::open_at(path, HEADER_LEN as u64)
    }

    /// Opens an existing log, truncating it to `valid_len`.
    pub fn open_at(path: &Path, valid_len: u64) -> io::Result<Self> {
        let mut file = OpenOptions::new().read(true).write(true).open(path)?;
        if file.metadata()?.len() != valid_len {
            file.set_len(valid_len)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::Start(valid_len))?;
        Ok(Self {
            file,
            len: valid_len,
        })
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    /// Appends one frame durably. On failure the file is rolled back to its
    /// previous length.
    pub fn append(&mut self, frame: &[u8]) -> io::Result<()> {
        let result = self
            .file
            .write_all(frame)
            .and_then(|_| self.file.sync_data());
        match result {
            Ok(()) => {
                self.len += frame.len() as u64;
                Ok(())
            }
            Err(e) => {
                let _ = self.file.set_len(self.len);
                let _ = self.file.seek(SeekFrom::Start(self.len));
                Err(e)
            }
        }
    }

    /// Writes only the first `n` bytes of a frame and leaves them on disk, the
    /// way a process killed mid-write would.
    pub fn append_torn(&mut self, frame: &[u8], n: usize) -> io::Result<()> {
        let n = n.min(frame.len());
        self.file.write_all(&frame[..n])?;
        self.file.sync_data()
    }
}
