//! A deterministic event-loop client driven by virtual time.
//!
//! [`Client`] plays either role against an [`ElementTree`]. As leader it
//! records every nondeterministic input into an outbox of protocol
//! messages; as follower it applies those records and never runs a handler
//! on its own.

mod client;
mod clock;
mod pool;
mod tables;
mod tree;

use thiserror::Error;

pub use client::{Client, ClientConfig, Page, Scope, Script, Selection};
pub use clock::{ScheduledTimer, VirtualClock};
pub use pool::{RandomPool, POOL_SIZE};
pub use tables::{
    md5_hex, source_hash, Handler, HandlerEntry, HandlerTable, Registration, TimerEntry, TimerTable,
};
pub use tree::{Dom0Slot, ElementKind, ElementSpec, ElementTree, Node, NodeRef};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("authored id {0:?} used by more than one element")]
    DuplicateAuthoredId(String),
    #[error("no element with id {0:?}")]
    UnknownElement(String),
    #[error("no handler registered for ({element_id}, {event_type})")]
    UnknownHandler { element_id: String, event_type: String },
    #[error("no timer registered under hash {0}")]
    UnknownTimer(String),
    #[error("expected record seq {expected}, got {got}")]
    SeqGap { expected: u64, got: u64 },
    #[error("timer hash {0} already registered with different source text")]
    HashCollision(String),
    #[error("random pool exhausted")]
    PoolExhausted,
    #[error("random pool overflow")]
    PoolOverflow,
    #[error("follower is read-only")]
    ReadOnly,
    #[error("only a follower applies remote records")]
    NotFollower,
    #[error("input is blocked while a role swap is pending")]
    Frozen,
    #[error("timer delay must be positive")]
    InvalidDelay,
    #[error("element {0:?} has no user-editable state")]
    NotStateful(String),
    #[error("invalid state update: {0}")]
    InvalidState(String),
    #[error("malformed record: {0}")]
    BadRecord(String),
    #[error("page handler failed: {0}")]
    Handler(String),
}

impl SimError {
    /// Errors that mean the follower no longer mirrors the leader.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            SimError::UnknownHandler { .. }
                | SimError::UnknownTimer(_)
                | SimError::SeqGap { .. }
                | SimError::PoolExhausted
                | SimError::PoolOverflow
                | SimError::UnknownElement(_)
                | SimError::BadRecord(_)
        )
    }
}
