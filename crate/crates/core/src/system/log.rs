//! Redo log with group commit.
//!
//! ```text
//! header: "FLOG" | version u32 | dim u32
//! record: len u32 | op u8 (1 insert, 2 delete) | id u64 | payload | crc32 u32
//! ```
//!
//! `len` counts the bytes after the length field (op through checksum); the
//! checksum covers every preceding byte of the record, length included. An
//! insert's payload is `dim` little-endian f32s; a delete has none.
//!
//! Appended records are buffered and written with one `fsync` once `F`
//! records are pending or the oldest has waited `t`. An operation counts as
//! durable once the flush covering its record has completed.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::Cursor;

pub const LOG_MAGIC: &[u8; 4] = b"FLOG";
pub const LOG_VERSION: u32 = 1;
pub const LOG_HEADER_LEN: u64 = 12;

const OP_INSERT: u8 = 1;
const OP_DELETE: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum LogOp {
    Insert { id: u64, vector: Vec<f32> },
    Delete { id: u64 },
}

impl LogOp {
    pub fn id(&self) -> u64 {
        match self {
            LogOp::Insert { id, .. } | LogOp::Delete { id } => *id,
        }
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let start = out.len();
        let (op, id, payload): (u8, u64, &[f32]) = match self {
            LogOp::Insert { id, vector } => (OP_INSERT, *id, vector),
            LogOp::Delete { id } => (OP_DELETE, *id, &[]),
        };
        let len = (1 + 8 + 4 * payload.len() + 4) as u32;
        out.extend_from_slice(&len.to_le_bytes());
        out.push(op);
        out.extend_from_slice(&id.to_le_bytes());
        for x in payload {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }
}

pub fn log_header(dim: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(LOG_HEADER_LEN as usize);
    out.extend_from_slice(LOG_MAGIC);
    out.extend_from_slice(&LOG_VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out
}

/// A replayed record and the file offset just past it.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub op: LogOp,
    pub end: u64,
}

/// Parsed log: the valid records and the length of the valid prefix. Parsing
/// stops at the first truncated or corrupt record.
#[derive(Debug, Clone, PartialEq)]
pub struct LogContents {
    pub dim: usize,
    pub entries: Vec<LogEntry>,
    pub valid_len: u64,
}

pub fn parse_log(bytes: &[u8]) -> Result<LogContents> {
    const WHAT: &str = "redo log";
    let mut c = Cursor::new(bytes, WHAT);
    if c.take(4)? != LOG_MAGIC {
        return Err(Error::format(WHAT, "bad magic"));
    }
    let version = c.u32()?;
    if version != LOG_VERSION {
        return Err(Error::format(WHAT, format!("unsupported version {version}")));
    }
    let dim = c.u32()? as usize;
    let mut pos = LOG_HEADER_LEN as usize;
    let mut entries = Vec::new();
    while let Some((op, next)) = parse_record(bytes, pos, dim) {
        entries.push(LogEntry { op, end: next as u64 });
        pos = next;
    }
    Ok(LogContents {
        dim,
        entries,
        valid_len: pos as u64,
    })
}

fn parse_record(bytes: &[u8], pos: usize, dim: usize) -> Option<(LogOp, usize)> {
    let len = u32::from_le_bytes(bytes.get(pos..pos + 4)?.try_into().ok()?) as usize;
    let end = pos.checked_add(4)?.checked_add(len)?;
    let rec = bytes.get(pos..end)?;
    if len < 13 {
        return None;
    }
    let (body, crc) = rec.split_at(rec.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().ok()?) {
        return None;
    }
    let op = body[4];
    let id = u64::from_le_bytes(body[5..13].try_into().ok()?);
    let payload = &body[13..];
    match op {
        OP_INSERT if payload.len() == 4 * dim => {
            let vector = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            Some((LogOp::Insert { id, vector }, end))
        }
        OP_DELETE if payload.is_empty() => Some((LogOp::Delete { id }, end)),
        _ => None,
    }
}

/// Reads the log at `path`, truncating any invalid tail. Creates the file
/// if it does not exist.
pub fn recover_log(path: &Path, dim: usize) -> Result<LogContents> {
    if !path.exists() {
        let mut f = File::create(path)?;
        f.write_all(&log_header(dim))?;
        f.sync_all()?;
    }
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let contents = parse_log(&bytes)?;
    if contents.dim != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: contents.dim,
        });
    }
    if contents.valid_len < bytes.len() as u64 {
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(contents.valid_len)?;
        f.sync_all()?;
    }
    Ok(contents)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlushPolicy {
    /// Flush once this many records are pending.
    pub max_ops: usize,
    /// Flush once the oldest pending record has waited this long.
    pub max_wait: Duration,
}

impl Default for FlushPolicy {
    fn default() -> Self {
        FlushPolicy {
            max_ops: 64,
            max_wait: Duration::from_millis(5),
        }
    }
}

struct State {
    file: File,
    buf: Vec<u8>,
    pending: usize,
    oldest: Option<Instant>,
    /// Offset after the last appended record.
    appended: u64,
    /// Offset after the last flushed record.
    durable: u64,
    closed: bool,
    failure: Option<String>,
}

struct Shared {
    state: Mutex<State>,
    cv: Condvar,
    policy: FlushPolicy,
}

impl Shared {
    fn flush(&self, s: &mut State) {
        if s.buf.is_empty() {
            return;
        }
        let res = s.file.write_all(&s.buf).and_then(|_| s.file.sync_data());
        match res {
            Ok(()) => {
                s.durable = s.appended;
                s.buf.clear();
                s.pending = 0;
                s.oldest = None;
            }
            Err(e) => s.failure = Some(e.to_string()),
        }
        self.cv.notify_all();
    }
}

pub struct RedoLog {
    shared: Arc<Shared>,
    flusher: Mutex<Option<JoinHandle<()>>>,
}

impl RedoLog {
    /// Opens `path` for appending at `valid_len` (from [`recover_log`]).
    pub fn open(path: &Path, valid_len: u64, policy: FlushPolicy) -> Result<Self> {
        let mut file = OpenOptions::new().write(true).open(path)?;
        file.seek(SeekFrom::Start(valid_len))?;
        let shared = Arc::new(Shared {
            state: Mutex::new(State {
                file,
                buf: Vec::new(),
                pending: 0,
                oldest: None,
                appended: valid_len,
                durable: valid_len,
                closed: false,
                failure: None,
            }),
            cv: Condvar::new(),
            policy: FlushPolicy {
                max_ops: policy.max_ops.max(1),
                max_wait: policy.max_wait,
            },
        });
        let bg = shared.clone();
        let flusher = std::thread::Builder::new()
            .name("redo-flush".into())
            .spawn(move || {
                let mut s = bg.state.lock();
                loop {
                    if s.closed {
                        break;
                    }
                    match s.oldest {
                        Some(t) if t.elapsed() >= bg.policy.max_wait => bg.flush(&mut s),
                        Some(t) => {
                            let left = bg.policy.max_wait.saturating_sub(t.elapsed());
                            bg.cv.wait_for(&mut s, left);
                        }
                        None => {
                            bg.cv.wait(&mut s);
                        }
                    }
                }
            })?;
        Ok(RedoLog {
            shared,
            flusher: Mutex::new(Some(flusher)),
        })
    }

    /// Buffers `op` and returns the offset just past its record.
    pub fn append(&self, op: &LogOp) -> Result<u64> {
        let sh = &*self.shared;
        let mut s = sh.state.lock();
        if s.closed {
            return Err(Error::Shutdown);
        }
        let before = s.buf.len();
        op.encode_into(&mut s.buf);
        s.appended += (s.buf.len() - before) as u64;
        s.pending += 1;
        if s.oldest.is_none() {
            s.oldest = Some(Instant::now());
            sh.cv.notify_all();
        }
        if s.pending >= sh.policy.max_ops {
            sh.flush(&mut s);
        }
        Ok(s.appended)
    }

    /// Blocks until everything up to `offset` is on disk.
    pub fn wait_durable(&self, offset: u64) -> Result<()> {
        let sh = &*self.shared;
        let mut s = sh.state.lock();
        loop {
            if let Some(f) = &s.failure {
                return Err(Error::Io(std::io::Error::other(f.clone())));
            }
            if s.durable >= offset {
                return Ok(());
            }
            if s.closed {
                return Err(Error::Shutdown);
            }
            sh.cv.wait(&mut s);
        }
    }

    /// Offset after the last appended record.
    pub fn appended(&self) -> u64 {
        self.shared.state.lock().appended
    }

    pub fn durable(&self) -> u64 {
        self.shared.state.lock().durable
    }

    /// Flushes pending records now.
    pub fn flush(&self) -> Result<()> {
        let sh = &*self.shared;
        let mut s = sh.state.lock();
        sh.flush(&mut s);
        match &s.failure {
            Some(f) => Err(Error::Io(std::io::Error::other(f.clone()))),
            None => Ok(()),
        }
    }

    /// Stops the flusher. With `flush`, pending records are written first;
    /// without, they are dropped as a crash would drop them.
    pub fn close(&self, flush: bool) {
        {
            let sh = &*self.shared;
            let mut s = sh.state.lock();
            if flush && !s.closed {
                sh.flush(&mut s);
            }
            s.closed = true;
            s.buf.clear();
            sh.cv.notify_all();
        }
        if let Some(h) = self.flusher.lock().take() {
            let _ = h.join();
        }
    }
}

impl Drop for RedoLog {
    fn drop(&mut self) {
        self.close(true);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ops() -> Vec<LogOp> {
        vec![
            LogOp::Insert { id: 1, vector: vec![1.0, -2.5] },
            LogOp::Delete { id: 9 },
            LogOp::Insert { id: 2, vector: vec![0.0, 3.0] },
        ]
    }

    fn bytes_of(ops: &[LogOp]) -> Vec<u8> {
        let mut b = log_header(2);
        for op in ops {
            op.encode_into(&mut b);
        }
        b
    }

    #[test]
    fn record_layout() {
        let r = LogOp::Delete { id: 7 }.encode();
        assert_eq!(r.len(), 4 + 1 + 8 + 4);
        assert_eq!(u32::from_le_bytes(r[..4].try_into().unwrap()), 13);
        assert_eq!(r[4], 2);
        assert_eq!(crc32fast::hash(&r[..13]), u32::from_le_bytes(r[13..].try_into().unwrap()));
        let r = LogOp::Insert { id: 7, vector: vec![0.5; 3] }.encode();
        assert_eq!(r.len(), 4 + 1 + 8 + 12 + 4);
    }

    #[test]
    fn parse_round_trip_is_byte_exact() {
        let b = bytes_of(&ops());
        let c = parse_log(&b).unwrap();
        assert_eq!(c.valid_len, b.len() as u64);
        let ops: Vec<LogOp> = c.entries.iter().map(|e| e.op.clone()).collect();
        assert_eq!(bytes_of(&ops), b);
    }

    #[test]
    fn torn_and_corrupt_tails_stop_parsing() {
        let b = bytes_of(&ops());
        let full = parse_log(&b).unwrap();
        let second_end = full.entries[1].end as usize;
        for cut in second_end..b.len() {
            let c = parse_log(&b[..cut]).unwrap();
            assert_eq!(c.entries.len(), 2, "cut at {cut}");
            assert_eq!(c.valid_len, second_end as u64);
        }
        let mut bad = b.clone();
        bad[second_end + 6] ^= 0xFF;
        assert_eq!(parse_log(&bad).unwrap().entries.len(), 2);
        assert!(parse_log(b"FLOX").is_err());
    }

    #[test]
    fn durable_after_wait_and_truncated_on_recovery() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log");
        let c = recover_log(&path, 2).unwrap();
        let log = RedoLog::open(&path, c.valid_len, FlushPolicy::default()).unwrap();
        let mut last = 0;
        for op in ops() {
            last = log.append(&op).unwrap();
        }
        log.wait_durable(last).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes_of(&ops()));
        drop(log);

        // A torn record at the end is cut off.
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&LogOp::Delete { id: 3 }.encode()[..7]).unwrap();
        drop(f);
        let c = recover_log(&path, 2).unwrap();
        assert_eq!(c.entries.len(), 3);
        assert_eq!(std::fs::read(&path).unwrap(), bytes_of(&ops()));
    }

    #[test]
    fn crash_drops_unflushed_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log");
        let c = recover_log(&path, 2).unwrap();
        let policy = FlushPolicy {
            max_ops: 1000,
            max_wait: Duration::from_secs(60),
        };
        let log = RedoLog::open(&path, c.valid_len, policy).unwrap();
        log.append(&LogOp::Delete { id: 1 }).unwrap();
        log.close(false);
        assert_eq!(recover_log(&path, 2).unwrap().entries.len(), 0);
        assert!(log.append(&LogOp::Delete { id: 2 }).is_err());
    }

    #[test]
    fn group_commit_by_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log");
        let c = recover_log(&path, 2).unwrap();
        let policy = FlushPolicy {
            max_ops: 2,
            max_wait: Duration::from_secs(60),
        };
        let log = RedoLog::open(&path, c.valid_len, policy).unwrap();
        let a = log.append(&LogOp::Delete { id: 1 }).unwrap();
        assert!(log.durable() < a);
        let b = log.append(&LogOp::Delete { id: 2 }).unwrap();
        assert_eq!(log.durable(), b);
    }
}
