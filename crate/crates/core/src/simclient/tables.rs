use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use md5::{Digest, Md5};

use super::client::Scope;
use super::tree::NodeRef;
use super::SimError;
use crate::protocol::{Payload, TimerKind};

type HandlerBody = dyn Fn(&mut Scope<'_>, &Payload) -> Result<(), SimError> + Send + Sync;

/// A page closure together with its source text.
///
/// The source stands in for `Function.prototype.toString()`: timers are
/// matched across clients by the MD5 of this text.
#[derive(Clone)]
pub struct Handler {
    source: Arc<str>,
    body: Arc<HandlerBody>,
}

impl Handler {
    pub fn new<F>(source: impl Into<Arc<str>>, body: F) -> Self
    where
        F: Fn(&mut Scope<'_>, &Payload) -> Result<(), SimError> + Send + Sync + 'static,
    {
        Handler { source: source.into(), body: Arc::new(body) }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// True when both refer to the same closure object.
    pub fn same_closure(&self, other: &Handler) -> bool {
        Arc::ptr_eq(&self.body, &other.body)
    }

    pub(crate) fn call(&self, scope: &mut Scope<'_>, payload: &Payload) -> Result<(), SimError> {
        (self.body)(scope, payload)
    }
}

impl fmt::Debug for Handler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Handler").field(&self.source).finish()
    }
}

/// Lowercase hex MD5 of `text`.
pub fn md5_hex(text: &[u8]) -> String {
    hex::encode(Md5::digest(text))
}

/// Timer identity: MD5 of the handler's source text.
pub fn source_hash(source: &str) -> String {
    md5_hex(source.as_bytes())
}

/// How a handler reached the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Registration {
    /// Property slot such as `onclick`.
    Dom0,
    /// `addEventListener`.
    Dom2,
}

impl Registration {
    /// DOM0 slots are the `on`-prefixed names.
    pub fn of(event_type: &str) -> Registration {
        if event_type.starts_with("on") {
            Registration::Dom0
        } else {
            Registration::Dom2
        }
    }
}

#[derive(Debug, Clone)]
pub struct HandlerEntry {
    pub handler: Handler,
    pub target: NodeRef,
    pub via: Registration,
}

/// `(element id, event type) -> handler + target`. One entry per key;
/// registering again replaces the previous entry.
#[derive(Debug, Clone, Default)]
pub struct HandlerTable {
    entries: BTreeMap<(String, String), HandlerEntry>,
}

impl HandlerTable {
    pub fn insert(&mut self, element_id: &str, event_type: &str, entry: HandlerEntry) {
        self.entries.insert((element_id.to_owned(), event_type.to_owned()), entry);
    }

    pub fn get(&self, element_id: &str, event_type: &str) -> Option<&HandlerEntry> {
        // BTreeMap<(String, String)> cannot be probed with borrowed pairs.
        self.entries.get(&(element_id.to_owned(), event_type.to_owned()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, String), &HandlerEntry)> {
        self.entries.iter()
    }

    /// Keys with the source text of each handler, for comparing tables.
    pub fn fingerprint(&self) -> Vec<(String, String, String)> {
        self.entries
            .iter()
            .map(|((id, ty), e)| (id.clone(), ty.clone(), e.handler.source().to_owned()))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TimerEntry {
    pub delay: u64,
    pub kind: TimerKind,
    pub handler: Handler,
}

/// `MD5(source) -> {delay, kind, handler}`.
#[derive(Debug, Clone, Default)]
pub struct TimerTable {
    entries: BTreeMap<String, TimerEntry>,
}

impl TimerTable {
    /// Stores `entry` under `hash`. The same source registered again
    /// overwrites; a different source under the same hash is refused.
    pub fn insert(&mut self, hash: &str, entry: TimerEntry) -> Result<(), SimError> {
        if let Some(existing) = self.entries.get(hash) {
            if existing.handler.source() != entry.handler.source() {
                return Err(SimError::HashCollision(hash.to_owned()));
            }
        }
        self.entries.insert(hash.to_owned(), entry);
        Ok(())
    }

    pub fn get(&self, hash: &str) -> Option<&TimerEntry> {
        self.entries.get(hash)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
