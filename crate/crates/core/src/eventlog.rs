//! Append-only record log kept by the coordinator.
//!
//! The log is the whole state-transfer story: a new follower is brought up
//! to date by replaying it from the first record, and records that arrive
//! while the replay is running are simply added to the end.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::Serialize;
use thiserror::Error;

use crate::protocol::{self, DecodeError, EventRecord, Message};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("record seq {got} does not follow log length {len}")]
    SeqGap { len: u64, got: u64 },
    #[error("record {seq} cannot be encoded: {source}")]
    Encode {
        seq: u64,
        #[source]
        source: protocol::EncodeError,
    },
    #[error("line {line}: {source}")]
    Decode {
        line: usize,
        #[source]
        source: DecodeError,
    },
    #[error("line {line}: expected an Event message, found {tag}")]
    NotAnEvent { line: usize, tag: &'static str },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    records: Vec<EventRecord>,
    byte_size: u64,
    started_at_ms: u64,
}

/// Count, size and growth rate of a log over a time window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct LogStats {
    pub event_count: u64,
    pub bytes: u64,
    pub duration_sec: f64,
    #[serde(rename = "bandwidthKBps")]
    pub bandwidth_kbps: f64,
}

impl LogStats {
    fn new(event_count: u64, bytes: u64, duration_ms: u64) -> Self {
        let duration_sec = duration_ms as f64 / 1000.0;
        let bandwidth_kbps = if duration_ms == 0 {
            0.0
        } else {
            bytes as f64 / 1024.0 / duration_sec
        };
        LogStats { event_count, bytes, duration_sec, bandwidth_kbps }
    }
}

/// A position in the log, used to measure only what was appended after it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogMark {
    pub len: u64,
    pub bytes: u64,
    pub at_ms: u64,
}

/// Wire length of `record` when stored or replayed as an `Event` message.
pub fn encoded_len(record: &EventRecord) -> Result<u64, protocol::EncodeError> {
    protocol::encode(&Message::Event { record: record.clone() }).map(|b| b.len() as u64)
}

impl EventLog {
    pub fn new(started_at_ms: u64) -> Self {
        EventLog { started_at_ms, ..Default::default() }
    }

    pub fn len(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn byte_size(&self) -> u64 {
        self.byte_size
    }

    pub fn started_at_ms(&self) -> u64 {
        self.started_at_ms
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn get(&self, seq: u64) -> Option<&EventRecord> {
        seq.checked_sub(1).and_then(|i| self.records.get(i as usize))
    }

    pub fn last_seq(&self) -> u64 {
        self.len()
    }

    pub fn append(&mut self, record: EventRecord) -> Result<(), LogError> {
        let expected = self.len() + 1;
        if record.seq != expected {
            return Err(LogError::SeqGap { len: self.len(), got: record.seq });
        }
        let n = encoded_len(&record).map_err(|source| LogError::Encode { seq: record.seq, source })?;
        self.byte_size += n;
        self.records.push(record);
        Ok(())
    }

    /// Records in seq order.
    pub fn replay_iter(&self) -> std::slice::Iter<'_, EventRecord> {
        self.records.iter()
    }

    pub fn stats(&self, now_ms: u64) -> LogStats {
        LogStats::new(self.len(), self.byte_size, now_ms.saturating_sub(self.started_at_ms))
    }

    pub fn mark(&self, now_ms: u64) -> LogMark {
        LogMark { len: self.len(), bytes: self.byte_size, at_ms: now_ms }
    }

    /// Stats for the records appended after `mark`.
    pub fn stats_since(&self, mark: LogMark, now_ms: u64) -> LogStats {
        LogStats::new(
            self.len() - mark.len,
            self.byte_size - mark.bytes,
            now_ms.saturating_sub(mark.at_ms),
        )
    }

    pub fn persist(&self, path: &Path) -> Result<(), LogError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for record in &self.records {
            let line = protocol::encode(&Message::Event { record: record.clone() })
                .map_err(|source| LogError::Encode { seq: record.seq, source })?;
            w.write_all(&line)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<EventLog, LogError> {
        Self::read_from(BufReader::new(fs::File::open(path)?))
    }

    /// Parses newline-delimited `Event` messages. A last line without its
    /// terminating newline is reported as truncated.
    pub fn read_from<R: BufRead>(mut reader: R) -> Result<EventLog, LogError> {
        let mut log = EventLog::new(0);
        let mut buf = Vec::new();
        let mut line = 0;
        loop {
            buf.clear();
            if reader.read_until(b'\n', &mut buf)? == 0 {
                break;
            }
            line += 1;
            if buf.last() != Some(&b'\n') {
                return Err(LogError::Decode {
                    line,
                    source: DecodeError { reason: "truncated line (missing newline)".into() },
                });
            }
            let record = match protocol::decode(&buf) {
                Ok(Message::Event { record }) => record,
                Ok(other) => return Err(LogError::NotAnEvent { line, tag: other.tag() }),
                Err(source) => return Err(LogError::Decode { line, source }),
            };
            log.append(record)?;
        }
        Ok(log)
    }
}

/// An [`EventLog`] shared between one writer and any number of readers.
#[derive(Debug, Clone, Default)]
pub struct SharedEventLog(Arc<RwLock<EventLog>>);

impl SharedEventLog {
    pub fn new(log: EventLog) -> Self {
        SharedEventLog(Arc::new(RwLock::new(log)))
    }

    pub fn append(&self, record: EventRecord) -> Result<(), LogError> {
        self.0.write().expect("event log lock poisoned").append(record)
    }

    pub fn len(&self) -> u64 {
        self.0.read().expect("event log lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> EventLog {
        self.0.read().expect("event log lock poisoned").clone()
    }

    /// A replay cursor: yields everything present now and anything appended
    /// before the cursor reaches the end.
    pub fn replay_iter(&self) -> LogCursor {
        LogCursor { log: self.clone(), next: 0 }
    }
}

pub struct LogCursor {
    log: SharedEventLog,
    next: usize,
}

impl Iterator for LogCursor {
    type Item = EventRecord;

    fn next(&mut self) -> Option<EventRecord> {
        let guard = self.log.0.read().expect("event log lock poisoned");
        let rec = guard.records.get(self.next).cloned();
        if rec.is_some() {
            self.next += 1;
        }
        rec
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Payload;

    fn rec(seq: u64) -> EventRecord {
        let mut p = Payload::new();
        p.insert("clientX".into(), (seq * 3).into());
        EventRecord::dom_event("onclick", format!("sid-{seq}"), p).with_seq(seq)
    }

    #[test]
    fn append_grows_and_counts_bytes() {
        let mut log = EventLog::new(0);
        log.append(rec(1)).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log.byte_size(), encoded_len(&rec(1)).unwrap());
    }

    #[test]
    fn append_rejects_gap() {
        let mut log = EventLog::new(0);
        for s in 1..=5 {
            log.append(rec(s)).unwrap();
        }
        assert!(matches!(log.append(rec(7)), Err(LogError::SeqGap { len: 5, got: 7 })));
        assert!(matches!(log.append(rec(5)), Err(LogError::SeqGap { .. })));
        assert_eq!(log.len(), 5);
    }

    #[test]
    fn replay_iter_in_order_and_empty() {
        let mut log = EventLog::new(0);
        assert_eq!(log.replay_iter().count(), 0);
        for s in 1..=3 {
            log.append(rec(s)).unwrap();
        }
        let seqs: Vec<u64> = log.replay_iter().map(|r| r.seq).collect();
        assert_eq!(seqs, [1, 2, 3]);
    }

    #[test]
    fn cursor_sees_appends_made_during_iteration() {
        let shared = SharedEventLog::new(EventLog::new(0));
        for s in 1..=3 {
            shared.append(rec(s)).unwrap();
        }
        let mut cursor = shared.replay_iter();
        let first: Vec<u64> = cursor.by_ref().take(3).map(|r| r.seq).collect();
        assert_eq!(first, [1, 2, 3]);
        assert!(cursor.next().is_none());
        shared.append(rec(4)).unwrap();
        assert_eq!(cursor.next().map(|r| r.seq), Some(4));
    }

    #[test]
    fn stats_units() {
        let log = EventLog::new(0);
        let s = log.stats(5000);
        assert_eq!((s.event_count, s.bytes, s.bandwidth_kbps), (0, 0, 0.0));
        assert_eq!(s.duration_sec, 5.0);

        let s = LogStats::new(1, 1024, 1000);
        assert_eq!(s.bandwidth_kbps, 1.0);
        assert_eq!(LogStats::new(3, 10, 0).bandwidth_kbps, 0.0);
    }

    #[test]
    fn stats_since_mark_counts_only_the_tail() {
        let mut log = EventLog::new(0);
        log.append(rec(1)).unwrap();
        let mark = log.mark(100);
        log.append(rec(2)).unwrap();
        let s = log.stats_since(mark, 1100);
        assert_eq!(s.event_count, 1);
        assert_eq!(s.bytes, encoded_len(&rec(2)).unwrap());
        assert_eq!(s.duration_sec, 1.0);
    }

    #[test]
    fn persist_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("three.log");
        let mut log = EventLog::new(0);
        for s in 1..=3 {
            log.append(rec(s)).unwrap();
        }
        log.persist(&path).unwrap();
        let back = EventLog::load(&path).unwrap();
        assert_eq!(back.records(), log.records());
        assert_eq!(back.byte_size(), log.byte_size());
        assert_eq!(fs::metadata(&path).unwrap().len(), log.byte_size());
    }

    #[test]
    fn load_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.log");
        fs::write(&path, b"").unwrap();
        assert!(EventLog::load(&path).unwrap().is_empty());
    }

    #[test]
    fn load_truncated_last_line_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.log");
        let mut log = EventLog::new(0);
        for s in 1..=3 {
            log.append(rec(s)).unwrap();
        }
        log.persist(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        match EventLog::load(&path) {
            Err(LogError::Decode { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected decode error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_non_event_lines() {
        let data = b"{\"t\":\"Synced\"}\n";
        assert!(matches!(
            EventLog::read_from(&data[..]),
            Err(LogError::NotAnEvent { line: 1, tag: "Synced" })
        ));
    }
}
