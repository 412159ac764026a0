//! Messages exchanged between clients and the coordinator, and the
//! newline-delimited JSON codec that carries them.
//!
//! Every message is one line of UTF-8 JSON with a top-level `"t"` field
//! naming the variant. Field order on the wire is the declaration order
//! below, so encoding is byte-stable. `protocol.md` at the repository root
//! is the normative description.

use std::io::{self, BufRead, Read};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Schema-free event payload: the serialized fields of an event object,
/// element state, or selection range.
pub type Payload = Map<String, Value>;

/// Largest integer a 64-bit float represents exactly. `seq`, counts and
/// timestamps must stay at or below it so the browser shim reads them back
/// unchanged.
pub const MAX_SAFE_INTEGER: u64 = (1 << 53) - 1;

/// Default cap on a single frame, newline included.
pub const MAX_FRAME_BYTES: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Leader,
    Follower,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Role::Leader => f.write_str("Leader"),
            Role::Follower => f.write_str("Follower"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RecordKind {
    DomEvent,
    TimerFired,
    StateUpdate,
    SelectionUpdate,
    RandomRefill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TimerKind {
    OneShot,
    Repeating,
}

/// One captured unit of leader non-determinism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EventRecord {
    pub seq: u64,
    pub kind: RecordKind,
    pub event_type: String,
    pub element_id: String,
    pub payload: Payload,
    pub wall_clock_ms: u64,
}

impl EventRecord {
    pub fn dom_event(
        event_type: impl Into<String>,
        element_id: impl Into<String>,
        payload: Payload,
    ) -> Self {
        EventRecord {
            seq: 0,
            kind: RecordKind::DomEvent,
            event_type: event_type.into(),
            element_id: element_id.into(),
            payload,
            wall_clock_ms: 0,
        }
    }

    pub fn timer_fired(hash: &str) -> Self {
        let mut payload = Payload::new();
        payload.insert("hash".into(), Value::String(hash.to_owned()));
        EventRecord {
            seq: 0,
            kind: RecordKind::TimerFired,
            event_type: String::new(),
            element_id: String::new(),
            payload,
            wall_clock_ms: 0,
        }
    }

    /// Builds a `RandomRefill` record. Values must be finite; range is
    /// checked by [`EventRecord::validate`].
    pub fn random_refill(values: &[f64]) -> Self {
        let values = values
            .iter()
            .map(|v| {
                serde_json::Number::from_f64(*v)
                    .map(Value::Number)
                    .unwrap_or(Value::Null)
            })
            .collect();
        let mut payload = Payload::new();
        payload.insert("values".into(), Value::Array(values));
        EventRecord {
            seq: 0,
            kind: RecordKind::RandomRefill,
            event_type: String::new(),
            element_id: String::new(),
            payload,
            wall_clock_ms: 0,
        }
    }

    /// Captured state of a stateful element: `{"value": .., "checked": ..}`.
    pub fn state_update(element_id: impl Into<String>, value: &str, checked: bool) -> Self {
        let mut payload = Payload::new();
        payload.insert("value".into(), Value::String(value.to_owned()));
        payload.insert("checked".into(), Value::Bool(checked));
        EventRecord {
            seq: 0,
            kind: RecordKind::StateUpdate,
            event_type: String::new(),
            element_id: element_id.into(),
            payload,
            wall_clock_ms: 0,
        }
    }

    pub fn selection_update(element_id: impl Into<String>, start: u64, span: u64) -> Self {
        let mut payload = Payload::new();
        payload.insert("start".into(), Value::from(start));
        payload.insert("span".into(), Value::from(span));
        EventRecord {
            seq: 0,
            kind: RecordKind::SelectionUpdate,
            event_type: String::new(),
            element_id: element_id.into(),
            payload,
            wall_clock_ms: 0,
        }
    }

    pub fn with_seq(mut self, seq: u64) -> Self {
        self.seq = seq;
        self
    }

    pub fn at(mut self, wall_clock_ms: u64) -> Self {
        self.wall_clock_ms = wall_clock_ms;
        self
    }

    /// The timer hash carried by a `TimerFired` record.
    pub fn timer_hash(&self) -> Option<&str> {
        self.payload.get("hash").and_then(Value::as_str)
    }

    /// The values carried by a `RandomRefill` record.
    pub fn refill_values(&self) -> Option<Vec<f64>> {
        self.payload
            .get("values")?
            .as_array()?
            .iter()
            .map(Value::as_f64)
            .collect()
    }

    pub fn validate(&self) -> Result<(), Violation> {
        if self.seq == 0 {
            return Err(Violation::new("record seq must be at least 1"));
        }
        check_safe("seq", self.seq)?;
        check_safe("wallClockMs", self.wall_clock_ms)?;
        match self.kind {
            RecordKind::DomEvent => {
                if self.event_type.is_empty() || self.element_id.is_empty() {
                    return Err(Violation::new(
                        "DomEvent requires non-empty eventType and elementId",
                    ));
                }
            }
            RecordKind::TimerFired => {
                self.require_no_dom_fields(false)?;
                match self.timer_hash() {
                    Some(h) if is_timer_hash(h) => {}
                    _ => {
                        return Err(Violation::new(
                            "TimerFired requires payload.hash of 32 lowercase hex chars",
                        ))
                    }
                }
            }
            RecordKind::RandomRefill => {
                self.require_no_dom_fields(false)?;
                match self.refill_values() {
                    Some(values) if !values.is_empty() => check_unit_interval(&values)?,
                    _ => {
                        return Err(Violation::new(
                            "RandomRefill requires a non-empty payload.values array of numbers",
                        ))
                    }
                }
            }
            RecordKind::StateUpdate | RecordKind::SelectionUpdate => {
                self.require_no_dom_fields(true)?;
            }
        }
        Ok(())
    }

    fn require_no_dom_fields(&self, needs_element: bool) -> Result<(), Violation> {
        if !self.event_type.is_empty() {
            return Err(Violation::new(format!(
                "{:?} must carry an empty eventType",
                self.kind
            )));
        }
        if needs_element == self.element_id.is_empty() {
            let want = if needs_element { "non-empty" } else { "empty" };
            return Err(Violation::new(format!(
                "{:?} must carry an {want} elementId",
                self.kind
            )));
        }
        Ok(())
    }
}

/// A timer that was pending on the leader when promotion was requested.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingTimer {
    pub hash: String,
    pub delay: u64,
    pub kind: TimerKind,
}

impl PendingTimer {
    pub fn validate(&self) -> Result<(), Violation> {
        if !is_timer_hash(&self.hash) {
            return Err(Violation::new("pending timer hash must be 32 lowercase hex chars"));
        }
        if self.delay == 0 {
            return Err(Violation::new("pending timer delay must be positive"));
        }
        check_safe("delay", self.delay)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all_fields = "camelCase")]
pub enum Message {
    Hello { client_info: String },
    RoleAssign { role: Role },
    RandomBatch { values: Vec<f64> },
    Event { record: EventRecord },
    ReplayBegin { count: u64 },
    Synced {},
    PromoteRequest { pending_timers: Vec<PendingTimer> },
    RoleSwap { new_role: Role, pending_timers: Vec<PendingTimer> },
    Ack { seq: u64 },
    Bye {},
}

impl Message {
    pub fn tag(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "Hello",
            Message::RoleAssign { .. } => "RoleAssign",
            Message::RandomBatch { .. } => "RandomBatch",
            Message::Event { .. } => "Event",
            Message::ReplayBegin { .. } => "ReplayBegin",
            Message::Synced {} => "Synced",
            Message::PromoteRequest { .. } => "PromoteRequest",
            Message::RoleSwap { .. } => "RoleSwap",
            Message::Ack { .. } => "Ack",
            Message::Bye {} => "Bye",
        }
    }

    /// Checks the per-type invariants that JSON typing alone cannot express.
    pub fn validate(&self) -> Result<(), Violation> {
        match self {
            Message::RandomBatch { values } => {
                if values.is_empty() {
                    return Err(Violation::new("RandomBatch must carry at least one value"));
                }
                check_unit_interval(values)
            }
            Message::Event { record } => record.validate(),
            Message::ReplayBegin { count } => check_safe("count", *count),
            Message::Ack { seq } => check_safe("seq", *seq),
            Message::PromoteRequest { pending_timers }
            | Message::RoleSwap { pending_timers, .. } => {
                pending_timers.iter().try_for_each(PendingTimer::validate)
            }
            Message::Hello { .. } | Message::RoleAssign { .. } | Message::Synced {} | Message::Bye {} => {
                Ok(())
            }
        }
    }
}

/// A broken type invariant.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct Violation(String);

impl Violation {
    fn new(msg: impl Into<String>) -> Self {
        Violation(msg.into())
    }
}

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("value {0} has no JSON representation")]
    NonRepresentable(f64),
    #[error("message violates its type invariants: {0}")]
    Invalid(#[from] Violation),
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot decode message: {reason}")]
pub struct DecodeError {
    pub reason: String,
}

impl DecodeError {
    fn new(reason: impl Into<String>) -> Self {
        DecodeError { reason: reason.into() }
    }
}

/// Encodes `msg` as one JSON line terminated by `\n`.
pub fn encode(msg: &Message) -> Result<Vec<u8>, EncodeError> {
    if let Message::RandomBatch { values } = msg {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(EncodeError::NonRepresentable(*v));
        }
    }
    msg.validate()?;
    let mut out = serde_json::to_vec(msg)?;
    out.push(b'\n');
    Ok(out)
}

/// Encodes without the trailing newline, as sent in a WebSocket text frame.
pub fn encode_frame_text(msg: &Message) -> Result<String, EncodeError> {
    let mut bytes = encode(msg)?;
    bytes.pop();
    // serde_json only emits UTF-8.
    Ok(String::from_utf8(bytes).expect("serde_json output is UTF-8"))
}

/// Decodes one record. A single trailing `\n` is accepted and stripped, so
/// both TCP lines and WebSocket frames decode through here.
pub fn decode(line: &[u8]) -> Result<Message, DecodeError> {
    let body = line.strip_suffix(b"\n").unwrap_or(line);
    if body.contains(&b'\n') {
        return Err(DecodeError::new("interior newline in record"));
    }
    let text = std::str::from_utf8(body)
        .map_err(|e| DecodeError::new(format!("invalid UTF-8: {e}")))?;
    let value: Value =
        serde_json::from_str(text).map_err(|e| DecodeError::new(format!("malformed JSON: {e}")))?;
    let tag = match value.get("t") {
        Some(Value::String(t)) => t.clone(),
        Some(_) => return Err(DecodeError::new("field \"t\" must be a string")),
        None => return Err(DecodeError::new("missing tag field \"t\"")),
    };
    if !KNOWN_TAGS.contains(&tag.as_str()) {
        return Err(DecodeError::new(format!("unknown tag {tag:?}")));
    }
    let msg: Message = serde_json::from_value(value)
        .map_err(|e| DecodeError::new(format!("bad {tag} fields: {e}")))?;
    msg.validate()
        .map_err(|v| DecodeError::new(format!("{tag}: {v}")))?;
    Ok(msg)
}

const KNOWN_TAGS: [&str; 10] = [
    "Hello",
    "RoleAssign",
    "RandomBatch",
    "Event",
    "ReplayBegin",
    "Synced",
    "PromoteRequest",
    "RoleSwap",
    "Ack",
    "Bye",
];

#[derive(Debug, Error)]
pub enum FrameError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("frame exceeds {0} bytes")]
    TooLong(usize),
    #[error("stream ended inside a frame")]
    Truncated,
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Reads the next newline-terminated frame into `buf` (cleared first).
/// Returns `Ok(false)` on a clean end of stream.
pub fn read_frame<R: BufRead>(reader: &mut R, buf: &mut Vec<u8>, max: usize) -> Result<bool, FrameError> {
    buf.clear();
    let n = reader.take(max as u64 + 1).read_until(b'\n', buf)?;
    if n == 0 {
        return Ok(false);
    }
    if buf.last() != Some(&b'\n') {
        if buf.len() > max {
            return Err(FrameError::TooLong(max));
        }
        return Err(FrameError::Truncated);
    }
    Ok(true)
}

/// Reads and decodes the next message, `None` at end of stream.
pub fn read_message<R: BufRead>(reader: &mut R) -> Result<Option<Message>, FrameError> {
    let mut buf = Vec::new();
    if !read_frame(reader, &mut buf, MAX_FRAME_BYTES)? {
        return Ok(None);
    }
    Ok(Some(decode(&buf)?))
}

/// True for a 32-character lowercase hex string.
pub fn is_timer_hash(s: &str) -> bool {
    s.len() == 32 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

fn check_safe(field: &str, v: u64) -> Result<(), Violation> {
    if v > MAX_SAFE_INTEGER {
        Err(Violation::new(format!("{field} {v} exceeds 2^53 - 1")))
    } else {
        Ok(())
    }
}

fn check_unit_interval(values: &[f64]) -> Result<(), Violation> {
    match values.iter().find(|v| !(0.0..1.0).contains(*v)) {
        Some(v) => Err(Violation::new(format!("random value {v} outside [0, 1)"))),
        None => Ok(()),
    }
}
