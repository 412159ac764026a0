use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use super::clock::{ScheduledTimer, VirtualClock};
use super::pool::{RandomPool, POOL_SIZE};
use super::tables::{md5_hex, source_hash, Handler, HandlerEntry, HandlerTable, Registration, TimerEntry, TimerTable};
use super::tree::{Dom0Slot, ElementKind, ElementSpec, ElementTree, Node, NodeRef};
use super::SimError;
use crate::protocol::{EventRecord, Message, Payload, PendingTimer, RecordKind, Role, TimerKind};

/// Page code run once the tree is loaded (the original `onload`).
pub type Script = Arc<dyn Fn(&mut Scope<'_>) -> Result<(), SimError> + Send + Sync>;

/// The static half of a page: markup plus its onload script.
#[derive(Clone, Default)]
pub struct Page {
    pub tree: ElementTree,
    pub onload: Option<Script>,
}

impl fmt::Debug for Page {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Page")
            .field("nodes", &self.tree.len())
            .field("onload", &self.onload.is_some())
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientConfig {
    /// Seeds the generator a leader draws fresh random values from.
    pub seed: u64,
    pub pool_size: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig { seed: 0, pool_size: POOL_SIZE }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub element_id: String,
    pub start: u64,
    pub span: u64,
}

#[derive(Clone)]
enum Task {
    SweepDom0,
}

/// One client of an MVX session.
#[derive(Clone)]
pub struct Client {
    role: Role,
    frozen: bool,
    tree: ElementTree,
    next_sid: u64,
    handlers: HandlerTable,
    timers: TimerTable,
    pool: RandomPool,
    clock: VirtualClock,
    rng: ChaCha8Rng,
    onload: Option<Script>,
    onload_pending: bool,
    tasks: Vec<Task>,
    in_handler: bool,
    vars: BTreeMap<String, Value>,
    selection: Option<Selection>,
    last_seq: u64,
    emitted: u64,
    outbox: Vec<Message>,
    firings: Vec<(u64, String)>,
    trail: Option<Vec<(u64, String)>>,
}

impl fmt::Debug for Client {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Client")
            .field("role", &self.role)
            .field("frozen", &self.frozen)
            .field("last_seq", &self.last_seq)
            .field("nodes", &self.tree.len())
            .field("handlers", &self.handlers.len())
            .field("timers", &self.timers.len())
            .field("pool", &self.pool.len())
            .field("now_ms", &self.clock.now_ms())
            .finish()
    }
}

impl Client {
    /// Loads `page` in `role`.
    ///
    /// A leader fills its random pool, emits the initial batch, then runs
    /// the page's onload followed by the deferred DOM0 sweep. A follower
    /// holds onload back until the initial batch arrives, so both run it
    /// against the same pool.
    pub fn load(page: &Page, role: Role, config: ClientConfig) -> Result<Client, SimError> {
        let mut tree = page.tree.clone();
        let next_sid = tree.assign_ids(1)?;
        let mut c = Client {
            role,
            frozen: false,
            tree,
            next_sid,
            handlers: HandlerTable::default(),
            timers: TimerTable::default(),
            pool: RandomPool::new(config.pool_size),
            clock: VirtualClock::default(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            onload: page.onload.clone(),
            onload_pending: false,
            tasks: Vec::new(),
            in_handler: false,
            vars: BTreeMap::new(),
            selection: None,
            last_seq: 0,
            emitted: 0,
            outbox: Vec::new(),
            firings: Vec::new(),
            trail: None,
        };
        match role {
            Role::Leader => {
                let values: Vec<f64> = (0..config.pool_size).map(|_| c.rng.random::<f64>()).collect();
                c.pool.extend(&values)?;
                c.emit_batch(values);
                c.finish_load()?;
            }
            Role::Follower => c.onload_pending = true,
        }
        Ok(c)
    }

    fn finish_load(&mut self) -> Result<(), SimError> {
        self.onload_pending = false;
        self.queue(Task::SweepDom0);
        if let Some(script) = self.onload.clone() {
            self.enter(None, |scope| script(scope))?;
        }
        self.drain_tasks();
        self.checkpoint();
        Ok(())
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// True between a promote request and the swap commit.
    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    /// True until a follower has received the initial random batch.
    pub fn awaiting_initial_batch(&self) -> bool {
        self.onload_pending
    }

    pub fn tree(&self) -> &ElementTree {
        &self.tree
    }

    pub fn element(&self, id: &str) -> Result<&Node, SimError> {
        self.tree.get(id)
    }

    pub fn handlers(&self) -> &HandlerTable {
        &self.handlers
    }

    pub fn timers(&self) -> &TimerTable {
        &self.timers
    }

    pub fn pool(&self) -> &RandomPool {
        &self.pool
    }

    pub fn clock(&self) -> &VirtualClock {
        &self.clock
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    /// Moves the clock forward to `t` without firing anything, e.g. to the
    /// shared wall time when a client joins late.
    pub fn sync_clock(&mut self, t: u64) {
        self.clock.advance_to(t);
    }

    pub fn selection(&self) -> Option<&Selection> {
        self.selection.as_ref()
    }

    pub fn var(&self, name: &str) -> Option<&Value> {
        self.vars.get(name)
    }

    pub fn vars(&self) -> &BTreeMap<String, Value> {
        &self.vars
    }

    /// Seq of the last record this client emitted (leader) or applied
    /// (follower).
    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    /// Records emitted while leading, over the client's lifetime.
    pub fn records_emitted(&self) -> u64 {
        self.emitted
    }

    /// Messages produced since the last call, in emission order.
    pub fn take_outbox(&mut self) -> Vec<Message> {
        std::mem::take(&mut self.outbox)
    }

    /// Timers this client fired while leading, as `(virtual ms, hash)`.
    pub fn timer_firings(&self) -> &[(u64, String)] {
        &self.firings
    }

    /// Timers scheduled on the clock, in firing order.
    pub fn pending_timers(&self) -> Vec<PendingTimer> {
        self.clock.pending()
    }

    /// Starts recording `(seq, state_hash)` after every step, for locating
    /// the first divergent record.
    pub fn enable_trail(&mut self) {
        self.trail.get_or_insert_with(Vec::new);
    }

    pub fn trail(&self) -> &[(u64, String)] {
        self.trail.as_deref().unwrap_or(&[])
    }

    /// Stores `handler` for `(element_id, event_type)` and, on a leader,
    /// installs a live recording wrapper. `on`-prefixed types are DOM0
    /// slots; anything else is an `addEventListener` registration.
    pub fn register_handler(&mut self, element_id: &str, event_type: &str, handler: Handler) -> Result<(), SimError> {
        let r = self.find(element_id)?;
        self.register_at(r, event_type, handler, Registration::of(event_type));
        Ok(())
    }

    /// `addEventListener`: always a DOM2 registration.
    pub fn add_event_listener(&mut self, element_id: &str, event_type: &str, handler: Handler) -> Result<(), SimError> {
        let r = self.find(element_id)?;
        self.register_at(r, event_type, handler, Registration::Dom2);
        Ok(())
    }

    /// Assigns a DOM0 slot the way page code does (`el.onclick = f`). The
    /// raw value is picked up by the next zero-delay sweep.
    pub fn set_dom0(&mut self, element_id: &str, slot: &str, handler: Handler) -> Result<(), SimError> {
        let r = self.find(element_id)?;
        self.tree.node_mut(r).dom0.insert(slot.to_owned(), Dom0Slot::Raw(handler));
        self.queue(Task::SweepDom0);
        Ok(())
    }

    /// Appends a new element under `parent_id` and returns its id.
    pub fn create_element(&mut self, parent_id: &str, tag: &str) -> Result<String, SimError> {
        let parent = self.find(parent_id)?;
        let kind = match tag {
            "input" | "textarea" => ElementKind::TextInput,
            _ => ElementKind::Generic,
        };
        let r = self.tree.create(parent, ElementSpec::new(tag).kind(kind), &mut self.next_sid);
        self.queue(Task::SweepDom0);
        Ok(self.tree.node(r).id().to_owned())
    }

    /// Registers a timer under the MD5 of the handler's source. Only a
    /// leader schedules it; a follower waits for `TimerFired` records.
    pub fn set_timer(&mut self, delay_ms: u64, kind: TimerKind, handler: Handler) -> Result<String, SimError> {
        if delay_ms == 0 {
            return Err(SimError::InvalidDelay);
        }
        let hash = source_hash(handler.source());
        self.timers.insert(&hash, TimerEntry { delay: delay_ms, kind, handler })?;
        if self.role == Role::Leader {
            let fire_at = self.clock.now_ms() + delay_ms;
            self.clock.schedule(fire_at, ScheduledTimer { hash: hash.clone(), delay: delay_ms, kind });
        }
        Ok(hash)
    }

    /// `Math.random()`: takes the pool head. A leader replaces it with a
    /// fresh value and emits that value as a refill.
    pub fn random(&mut self) -> Result<f64, SimError> {
        let v = self.pool.pop()?;
        if self.role == Role::Leader {
            let fresh = self.rng.random::<f64>();
            self.pool.push(fresh)?;
            self.emit_batch(vec![fresh]);
        }
        Ok(v)
    }

    /// A user event on the leader. Returns the number of handlers run.
    pub fn dispatch_user_event(&mut self, element_id: &str, event_type: &str, payload: &Payload) -> Result<usize, SimError> {
        self.require_live_leader()?;
        let ran = self.browser_fire(element_id, event_type, payload)?;
        self.checkpoint();
        Ok(ran)
    }

    /// What the browser does for a local event on either role: bubble from
    /// the element to the root, running whatever is installed in the slots.
    /// On a follower nothing is installed, so nothing runs.
    pub fn browser_fire(&mut self, element_id: &str, event_type: &str, payload: &Payload) -> Result<usize, SimError> {
        let start = self.find(element_id)?;
        let slot = format!("on{event_type}");
        let mut ran = 0;
        for r in self.tree.ancestry(start) {
            match self.tree.node(r).dom0.get(&slot).cloned() {
                Some(Dom0Slot::Wrapped) => {
                    self.run_wrapped(r, &slot, payload)?;
                    ran += 1;
                }
                Some(Dom0Slot::Raw(h)) => {
                    log::warn!("{slot} on {} ran before interception", self.tree.node(r).id());
                    self.enter(Some(r), |scope| h.call(scope, payload))?;
                    ran += 1;
                }
                Some(Dom0Slot::Null) | None => {}
            }
            if self.tree.node(r).dom2_live.contains(event_type) {
                self.run_wrapped(r, event_type, payload)?;
                ran += 1;
            }
        }
        self.drain_tasks();
        Ok(ran)
    }

    fn run_wrapped(&mut self, r: NodeRef, key: &str, payload: &Payload) -> Result<(), SimError> {
        let id = self.tree.node(r).id().to_owned();
        let entry = self
            .handlers
            .get(&id, key)
            .cloned()
            .ok_or_else(|| SimError::UnknownHandler { element_id: id.clone(), event_type: key.to_owned() })?;
        self.emit(EventRecord::dom_event(key, id, payload.clone()));
        self.enter(Some(entry.target), |scope| entry.handler.call(scope, payload))
    }

    /// User input on a stateful element (`value` or `checked`). The
    /// leader's own change listener records the new state even when the
    /// page has no handler; page `change` handlers then bubble as usual.
    pub fn set_state(&mut self, element_id: &str, field: &str, value: &Value) -> Result<usize, SimError> {
        self.require_live_leader()?;
        let r = self.find(element_id)?;
        write_state(self.tree.node_mut(r), field, value)?;
        let node = self.tree.node(r);
        self.emit(EventRecord::state_update(element_id, node.value(), node.checked()));
        let mut payload = Payload::new();
        payload.insert("field".into(), Value::String(field.to_owned()));
        let ran = self.browser_fire(element_id, "change", &payload)?;
        self.checkpoint();
        Ok(ran)
    }

    /// User text selection, captured on mouse or shift release.
    pub fn select(&mut self, element_id: &str, start: u64, span: u64) -> Result<(), SimError> {
        self.require_live_leader()?;
        self.find(element_id)?;
        self.selection = Some(Selection { element_id: element_id.to_owned(), start, span });
        self.emit(EventRecord::selection_update(element_id, start, span));
        self.checkpoint();
        Ok(())
    }

    /// Moves virtual time forward. A leader fires every timer that falls
    /// due, each preceded by its `TimerFired` record; a follower only
    /// tracks the time. Returns the number of timers fired.
    pub fn advance_time(&mut self, ms: u64) -> Result<usize, SimError> {
        let target = self.clock.now_ms() + ms;
        if self.role == Role::Follower {
            self.clock.advance_to(target);
            return Ok(0);
        }
        if self.frozen {
            return Err(SimError::Frozen);
        }
        let mut fired = 0;
        while let Some((at, timer)) = self.clock.pop_due(target) {
            let entry = self.timers.get(&timer.hash).cloned().ok_or_else(|| SimError::UnknownTimer(timer.hash.clone()))?;
            if timer.kind == TimerKind::Repeating {
                self.clock.schedule(at + timer.delay, timer.clone());
            }
            self.emit(EventRecord::timer_fired(&timer.hash));
            self.firings.push((at, timer.hash));
            self.enter(None, |scope| entry.handler.call(scope, &Payload::new()))?;
            self.drain_tasks();
            self.checkpoint();
            fired += 1;
        }
        self.clock.advance_to(target);
        Ok(fired)
    }

    /// Applies one leader record. Any mismatch with local tables is a
    /// divergence and is returned, never skipped.
    pub fn apply_remote(&mut self, record: &EventRecord) -> Result<(), SimError> {
        if self.role != Role::Follower {
            return Err(SimError::NotFollower);
        }
        if record.seq != self.last_seq + 1 {
            return Err(SimError::SeqGap { expected: self.last_seq + 1, got: record.seq });
        }
        self.last_seq = record.seq;
        self.clock.advance_to(record.wall_clock_ms);
        match record.kind {
            RecordKind::DomEvent => {
                let entry = self.handlers.get(&record.element_id, &record.event_type).cloned().ok_or_else(|| {
                    SimError::UnknownHandler {
                        element_id: record.element_id.clone(),
                        event_type: record.event_type.clone(),
                    }
                })?;
                self.enter(Some(entry.target), |scope| entry.handler.call(scope, &record.payload))?;
            }
            RecordKind::TimerFired => {
                let hash = record.timer_hash().ok_or_else(|| SimError::BadRecord("TimerFired without hash".into()))?;
                let entry = self.timers.get(hash).cloned().ok_or_else(|| SimError::UnknownTimer(hash.to_owned()))?;
                self.enter(None, |scope| entry.handler.call(scope, &Payload::new()))?;
            }
            RecordKind::RandomRefill => {
                let values = record
                    .refill_values()
                    .ok_or_else(|| SimError::BadRecord("RandomRefill without values".into()))?;
                self.pool.extend(&values)?;
                if self.onload_pending {
                    return self.finish_load();
                }
            }
            RecordKind::StateUpdate => {
                let r = self.find(&record.element_id)?;
                let node = self.tree.node_mut(r);
                if let Some(v) = record.payload.get("value") {
                    write_state(node, "value", v)?;
                }
                // Text inputs carry `checked: false` too; only boxes take it.
                match record.payload.get("checked") {
                    Some(v) if node.kind != ElementKind::TextInput => write_state(node, "checked", v)?,
                    Some(Value::Bool(false)) | None => {}
                    Some(v) => return Err(SimError::BadRecord(format!("checked = {v} on a text input"))),
                }
            }
            RecordKind::SelectionUpdate => {
                self.find(&record.element_id)?;
                let field = |k: &str| {
                    record.payload.get(k).and_then(Value::as_u64).ok_or_else(|| SimError::BadRecord(format!("SelectionUpdate without {k}")))
                };
                self.selection = Some(Selection { element_id: record.element_id.clone(), start: field("start")?, span: field("span")? });
            }
        }
        self.drain_tasks();
        self.checkpoint();
        Ok(())
    }

    /// Freezes a leader for promotion and queues the promote request,
    /// carrying every timer still scheduled.
    pub fn request_promote(&mut self) -> Result<Vec<PendingTimer>, SimError> {
        self.require_live_leader()?;
        let pending = self.pending_timers();
        self.frozen = true;
        self.outbox.push(Message::PromoteRequest { pending_timers: pending.clone() });
        Ok(pending)
    }

    /// Becomes leader: installs live wrappers for every table entry and
    /// schedules each pending timer with its full original delay.
    pub fn promote(&mut self, pending: &[PendingTimer]) {
        self.role = Role::Leader;
        self.reinstall();
        self.clock.clear();
        let now = self.clock.now_ms();
        for t in pending {
            self.clock.schedule(now + t.delay, ScheduledTimer { hash: t.hash.clone(), delay: t.delay, kind: t.kind });
        }
    }

    /// Becomes follower: removes live wrappers and cancels all timers.
    pub fn demote(&mut self) {
        self.role = Role::Follower;
        self.reinstall();
        self.clock.clear();
    }

    /// Digest over tree shape, ids, element state, selection, pool, timer
    /// table keys and page variables. Equal across roles when the follower
    /// mirrors the leader.
    pub fn state_hash(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let mut depth: HashMap<NodeRef, usize> = HashMap::new();
        for r in self.tree.preorder() {
            let node = self.tree.node(r);
            let d = node.parent().map_or(0, |p| depth[&p] + 1);
            depth.insert(r, d);
            let _ = writeln!(s, "N {d} {} {} {:?} {:?} {}", node.id(), node.tag(), node.kind(), node.value(), node.checked());
        }
        let _ = writeln!(s, "S {:?}", self.selection);
        s.push('P');
        for v in self.pool.values() {
            let _ = write!(s, " {:016x}", v.to_bits());
        }
        s.push_str("\nT");
        for k in self.timers.keys() {
            let _ = write!(s, " {k}");
        }
        let vars = serde_json::to_string(&self.vars).expect("JSON values serialize");
        let _ = writeln!(s, "\nA {vars}");
        md5_hex(s.as_bytes())
    }

    fn reinstall(&mut self) {
        let entries: Vec<(String, NodeRef, Registration)> =
            self.handlers.iter().map(|((_, ty), e)| (ty.clone(), e.target, e.via)).collect();
        for (ty, r, via) in entries {
            self.install(r, &ty, via);
        }
    }

    fn register_at(&mut self, r: NodeRef, event_type: &str, handler: Handler, via: Registration) {
        let id = self.tree.node(r).id().to_owned();
        self.handlers.insert(&id, event_type, HandlerEntry { handler, target: r, via });
        self.install(r, event_type, via);
    }

    fn install(&mut self, r: NodeRef, event_type: &str, via: Registration) {
        let live = self.role == Role::Leader;
        let node = self.tree.node_mut(r);
        match via {
            Registration::Dom0 => {
                let slot = if live { Dom0Slot::Wrapped } else { Dom0Slot::Null };
                node.dom0.insert(event_type.to_owned(), slot);
            }
            Registration::Dom2 if live => {
                node.dom2_live.insert(event_type.to_owned());
            }
            Registration::Dom2 => {
                node.dom2_live.remove(event_type);
            }
        }
    }

    /// Moves every raw DOM0 slot into the handler table.
    fn sweep_dom0(&mut self) {
        for r in self.tree.preorder() {
            let raw: Vec<(String, Handler)> = self
                .tree
                .node(r)
                .dom0
                .iter()
                .filter_map(|(k, slot)| match slot {
                    Dom0Slot::Raw(h) => Some((k.clone(), h.clone())),
                    _ => None,
                })
                .collect();
            for (slot, h) in raw {
                self.register_at(r, &slot, h, Registration::Dom0);
            }
        }
    }

    fn queue(&mut self, task: Task) {
        self.tasks.push(task);
    }

    /// Runs queued zero-delay tasks. Called only between handlers.
    fn drain_tasks(&mut self) {
        while !self.tasks.is_empty() {
            for task in std::mem::take(&mut self.tasks) {
                match task {
                    Task::SweepDom0 => self.sweep_dom0(),
                }
            }
        }
    }

    /// Runs page code to completion with `target` as its receiver.
    fn enter<R>(&mut self, target: Option<NodeRef>, f: impl FnOnce(&mut Scope<'_>) -> R) -> R {
        assert!(!self.in_handler, "a handler started while another was running");
        self.in_handler = true;
        let out = f(&mut Scope { client: self, target });
        self.in_handler = false;
        out
    }

    fn emit(&mut self, record: EventRecord) {
        debug_assert_eq!(self.role, Role::Leader);
        self.last_seq += 1;
        self.emitted += 1;
        let record = record.with_seq(self.last_seq).at(self.clock.now_ms());
        self.outbox.push(Message::Event { record });
    }

    fn emit_batch(&mut self, values: Vec<f64>) {
        self.last_seq += 1;
        self.emitted += 1;
        self.outbox.push(Message::RandomBatch { values });
    }

    fn checkpoint(&mut self) {
        if self.trail.is_none() || self.last_seq == 0 {
            return;
        }
        if self.trail().last().is_some_and(|(s, _)| *s == self.last_seq) {
            return;
        }
        let h = self.state_hash();
        let seq = self.last_seq;
        self.trail.as_mut().expect("checked above").push((seq, h));
    }

    fn require_live_leader(&self) -> Result<(), SimError> {
        match (self.role, self.frozen) {
            (Role::Follower, _) => Err(SimError::ReadOnly),
            (Role::Leader, true) => Err(SimError::Frozen),
            (Role::Leader, false) => Ok(()),
        }
    }

    fn find(&self, id: &str) -> Result<NodeRef, SimError> {
        self.tree.find(id).ok_or_else(|| SimError::UnknownElement(id.to_owned()))
    }
}

fn write_state(node: &mut Node, field: &str, value: &Value) -> Result<(), SimError> {
    if !node.kind.is_stateful() {
        return Err(SimError::NotStateful(node.id().to_owned()));
    }
    match (field, value) {
        ("value", Value::String(s)) => node.value = s.clone(),
        ("checked", Value::Bool(b)) if matches!(node.kind, ElementKind::Checkbox | ElementKind::Radio) => {
            node.checked = *b
        }
        _ => return Err(SimError::InvalidState(format!("{field} = {value} on {:?}", node.kind))),
    }
    Ok(())
}

/// The view page code gets of its client while a handler runs.
pub struct Scope<'a> {
    client: &'a mut Client,
    target: Option<NodeRef>,
}

impl Scope<'_> {
    /// Id of the element the handler was registered on, if any.
    pub fn target(&self) -> Option<&str> {
        self.target.map(|r| self.client.tree.node(r).id())
    }

    pub fn role(&self) -> Role {
        self.client.role
    }

    pub fn random(&mut self) -> Result<f64, SimError> {
        self.client.random()
    }

    pub fn set_timeout(&mut self, delay_ms: u64, handler: Handler) -> Result<String, SimError> {
        self.client.set_timer(delay_ms, TimerKind::OneShot, handler)
    }

    pub fn set_interval(&mut self, delay_ms: u64, handler: Handler) -> Result<String, SimError> {
        self.client.set_timer(delay_ms, TimerKind::Repeating, handler)
    }

    pub fn create_element(&mut self, parent_id: &str, tag: &str) -> Result<String, SimError> {
        self.client.create_element(parent_id, tag)
    }

    pub fn add_event_listener(&mut self, element_id: &str, event_type: &str, handler: Handler) -> Result<(), SimError> {
        self.client.add_event_listener(element_id, event_type, handler)
    }

    pub fn set_dom0(&mut self, element_id: &str, slot: &str, handler: Handler) -> Result<(), SimError> {
        self.client.set_dom0(element_id, slot, handler)
    }

    pub fn element(&self, id: &str) -> Result<&Node, SimError> {
        self.client.element(id)
    }

    /// Script-driven state change; it replays because the handler does.
    pub fn set_value(&mut self, element_id: &str, value: &str) -> Result<(), SimError> {
        let r = self.client.find(element_id)?;
        write_state(self.client.tree.node_mut(r), "value", &Value::String(value.to_owned()))
    }

    pub fn set_checked(&mut self, element_id: &str, checked: bool) -> Result<(), SimError> {
        let r = self.client.find(element_id)?;
        write_state(self.client.tree.node_mut(r), "checked", &Value::Bool(checked))
    }

    pub fn selection(&self) -> Option<&Selection> {
        self.client.selection()
    }

    pub fn var(&self, name: &str) -> Value {
        self.client.vars.get(name).cloned().unwrap_or(Value::Null)
    }

    pub fn set_var(&mut self, name: &str, value: impl Into<Value>) {
        self.client.vars.insert(name.to_owned(), value.into());
    }

    /// Adds `delta` to an integer variable (missing counts as 0).
    pub fn add(&mut self, name: &str, delta: i64) -> i64 {
        let next = self.var(name).as_i64().unwrap_or(0) + delta;
        self.set_var(name, next);
        next
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;
    use crate::protocol::RecordKind;

    fn counter(src: &str, var: &'static str) -> Handler {
        Handler::new(src, move |scope, _| {
            scope.add(var, 1);
            Ok(())
        })
    }

    fn three_divs() -> Page {
        let mut tree = ElementTree::new();
        let a = tree.append(tree.root(), ElementSpec::new("div"));
        tree.append(a, ElementSpec::new("button"));
        Page { tree, onload: None }
    }

    fn records(c: &mut Client) -> Vec<EventRecord> {
        c.take_outbox()
            .into_iter()
            .filter_map(|m| match m {
                Message::Event { record } => Some(record),
                _ => None,
            })
            .collect()
    }

    fn relay(leader: &mut Client, follower: &mut Client) {
        let mut seq = follower.last_seq();
        for m in leader.take_outbox() {
            let record = match m {
                Message::Event { record } => record,
                Message::RandomBatch { values } => EventRecord::random_refill(&values),
                _ => continue,
            };
            seq += 1;
            follower.apply_remote(&record.with_seq(seq)).unwrap();
        }
    }

    fn pair(page: &Page) -> (Client, Client) {
        let leader = Client::load(page, Role::Leader, ClientConfig { seed: 7, ..Default::default() }).unwrap();
        let follower = Client::load(page, Role::Follower, ClientConfig { seed: 8, ..Default::default() }).unwrap();
        (leader, follower)
    }

    #[test]
    fn ids_assigned_in_preorder() {
        let c = Client::load(&three_divs(), Role::Leader, ClientConfig::default()).unwrap();
        let ids: Vec<&str> = c.tree().preorder().iter().map(|r| c.tree().node(*r).id()).collect();
        assert_eq!(ids, ["sid-1", "sid-2", "sid-3"]);
    }

    #[test]
    fn leader_emits_initial_batch_of_pool_size() {
        let mut c = Client::load(&three_divs(), Role::Leader, ClientConfig::default()).unwrap();
        let out = c.take_outbox();
        assert!(matches!(&out[..], [Message::RandomBatch { values }] if values.len() == POOL_SIZE));
        assert_eq!(c.last_seq(), 1);
    }

    #[test]
    fn leader_wrapper_records_then_runs() {
        let (mut leader, mut follower) = pair(&three_divs());
        leader.take_outbox();
        leader.register_handler("sid-3", "onclick", counter("f", "clicks")).unwrap();
        follower.register_handler("sid-3", "onclick", counter("f", "clicks")).unwrap();

        assert_eq!(leader.dispatch_user_event("sid-3", "click", &Payload::new()).unwrap(), 1);
        let recs = records(&mut leader);
        assert_eq!(recs.len(), 1);
        assert_eq!((recs[0].event_type.as_str(), recs[0].element_id.as_str()), ("onclick", "sid-3"));
        assert_eq!(leader.var("clicks"), Some(&Value::from(1)));

        // Nothing is installed on the follower, so a local click is inert.
        assert_eq!(follower.browser_fire("sid-3", "click", &Payload::new()).unwrap(), 0);
        assert_eq!(follower.var("clicks"), None);
        assert!(follower.take_outbox().is_empty());
        assert_eq!(follower.dispatch_user_event("sid-3", "click", &Payload::new()), Err(SimError::ReadOnly));
    }

    #[test]
    fn record_precedes_handler_effects() {
        let seen = Arc::new(AtomicUsize::new(usize::MAX));
        let mut c = Client::load(&three_divs(), Role::Leader, ClientConfig::default()).unwrap();
        let s = seen.clone();
        let h = Handler::new("probe", move |scope, _| {
            s.store(scope.client.outbox.len(), Ordering::SeqCst);
            Ok(())
        });
        c.take_outbox();
        c.register_handler("sid-2", "onclick", h).unwrap();
        c.dispatch_user_event("sid-2", "click", &Payload::new()).unwrap();
        assert_eq!(seen.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn reregistering_keeps_newest() {
        let mut c = Client::load(&three_divs(), Role::Leader, ClientConfig::default()).unwrap();
        c.register_handler("sid-2", "onclick", counter("old", "old")).unwrap();
        c.register_handler("sid-2", "onclick", counter("new", "new")).unwrap();
        c.dispatch_user_event("sid-2", "click", &Payload::new()).unwrap();
        assert_eq!(c.var("old"), None);
        assert_eq!(c.var("new"), Some(&Value::from(1)));
        assert_eq!(c.handlers().len(), 1);
    }

    #[test]
    fn bubbling_records_child_then_parent() {
        let mut c = Client::load(&three_divs(), Role::Leader, ClientConfig::default()).unwrap();
        c.take_outbox();
        c.register_handler("sid-2", "onclick", counter("p", "p")).unwrap();
        c.register_handler("sid-3", "onclick", counter("c", "c")).unwrap();
        assert_eq!(c.dispatch_user_event("sid-3", "click", &Payload::new()).unwrap(), 2);
        let ids: Vec<String> = records(&mut c).into_iter().map(|r| r.element_id).collect();
        assert_eq!(ids, ["sid-3", "sid-2"]);
        assert_eq!(c.dispatch_user_event("sid-1", "click", &Payload::new()).unwrap(), 0);
        assert!(records(&mut c).is_empty());
    }

    #[test]
    fn checkbox_toggle_without_handler_records_state() {
        let mut tree = ElementTree::new();
        tree.append(tree.root(), ElementSpec::new("input").id("cb").kind(ElementKind::Checkbox));
        let (mut leader, mut follower) = pair(&Page { tree, onload: None });
        leader.set_state("cb", "checked", &Value::Bool(true)).unwrap();
        let out = leader.take_outbox();
        let recs: Vec<&EventRecord> = out
            .iter()
            .filter_map(|m| if let Message::Event { record } = m { Some(record) } else { None })
            .collect();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].kind, RecordKind::StateUpdate);
        assert_ne!(leader.state_hash(), follower.state_hash());
        let mut seq = 0;
        for m in out {
            seq += 1;
            let record = match m {
                Message::Event { record } => record,
                Message::RandomBatch { values } => EventRecord::random_refill(&values),
                _ => unreachable!(),
            };
            follower.apply_remote(&record.with_seq(seq)).unwrap();
        }
        assert!(follower.element("cb").unwrap().checked());
        assert_eq!(leader.state_hash(), follower.state_hash());
    }

    #[test]
    fn create_continues_counter_and_sweep_catches_dom0() {
        let mut tree = ElementTree::new();
        for _ in 0..4 {
            tree.append(tree.root(), ElementSpec::new("p"));
        }
        let mut c = Client::load(&Page { tree, onload: None }, Role::Leader, ClientConfig::default()).unwrap();
        let make = Handler::new("make", |scope, _| {
            let id = scope.create_element("sid-1", "button")?;
            assert_eq!(id, "sid-6");
            scope.set_dom0(&id, "onclick", Handler::new("inner", |s, _| {
                s.add("inner", 1);
                Ok(())
            }))
        });
        c.register_handler("sid-1", "make", make).unwrap();
        c.take_outbox();
        c.dispatch_user_event("sid-1", "make", &Payload::new()).unwrap();
        assert!(matches!(c.element("sid-6").unwrap().dom0_slot("onclick"), Some(Dom0Slot::Wrapped)));
        c.take_outbox();
        c.dispatch_user_event("sid-6", "click", &Payload::new()).unwrap();
        assert_eq!(records(&mut c).len(), 1);
    }

    #[test]
    fn timers_fire_on_leader_and_replay_on_follower() {
        let page = Page {
            tree: ElementTree::new(),
            onload: Some(Arc::new(|scope: &mut Scope<'_>| {
                scope.set_interval(100, counter("function(){ ticks += 1 }", "ticks"))?;
                Ok(())
            })),
        };
        let (mut leader, mut follower) = pair(&page);
        assert_eq!(leader.advance_time(350).unwrap(), 3);
        relay(&mut leader, &mut follower);
        assert_eq!(follower.var("ticks"), Some(&Value::from(3)));
        assert!(follower.clock().is_empty());
        assert_eq!(leader.state_hash(), follower.state_hash());
    }

    #[test]
    fn unknown_handler_and_seq_gap_surface() {
        let (_, mut follower) = pair(&three_divs());
        let rec = EventRecord::dom_event("onclick", "sid-2", Payload::new()).with_seq(1);
        assert!(matches!(follower.apply_remote(&rec), Err(SimError::UnknownHandler { .. })));
        let gap = EventRecord::random_refill(&[0.5]).with_seq(5);
        assert_eq!(follower.apply_remote(&gap), Err(SimError::SeqGap { expected: 2, got: 5 }));
    }

    #[test]
    fn follower_can_lead_by_exactly_pool_size() {
        let (mut leader, mut follower) = pair(&three_divs());
        relay(&mut leader, &mut follower);
        for _ in 0..POOL_SIZE {
            follower.random().unwrap();
        }
        assert_eq!(follower.random(), Err(SimError::PoolExhausted));
    }

    #[test]
    fn promoted_timer_fires_after_full_delay() {
        let page = Page {
            tree: ElementTree::new(),
            onload: Some(Arc::new(|scope: &mut Scope<'_>| {
                scope.set_timeout(100, counter("function(){ fired += 1 }", "fired"))?;
                Ok(())
            })),
        };
        let (mut leader, mut follower) = pair(&page);
        leader.advance_time(60).unwrap();
        follower.advance_time(60).unwrap();
        relay(&mut leader, &mut follower);
        let pending = leader.request_promote().unwrap();
        assert_eq!(pending.len(), 1);
        leader.demote();
        follower.promote(&pending);
        assert!(leader.clock().is_empty());
        assert_eq!(follower.advance_time(99).unwrap(), 0);
        assert_eq!(follower.advance_time(1).unwrap(), 1);
        // Set at 0, fired at 160: within twice the delay.
        assert_eq!(follower.timer_firings()[0].0, 160);
    }

    #[test]
    fn promote_demote_round_trip_keeps_table() {
        let mut c = Client::load(&three_divs(), Role::Leader, ClientConfig::default()).unwrap();
        c.register_handler("sid-2", "onclick", counter("a", "a")).unwrap();
        c.add_event_listener("sid-3", "keyup", counter("b", "b")).unwrap();
        let before = c.handlers().fingerprint();
        c.demote();
        assert!(matches!(c.element("sid-2").unwrap().dom0_slot("onclick"), Some(Dom0Slot::Null)));
        assert!(!c.element("sid-3").unwrap().has_live_listener("keyup"));
        c.promote(&[]);
        assert!(c.element("sid-3").unwrap().has_live_listener("keyup"));
        assert_eq!(c.handlers().fingerprint(), before);
    }

    #[test]
    fn state_hash_tracks_state() {
        let mut tree = ElementTree::new();
        tree.append(tree.root(), ElementSpec::new("input").id("cb").kind(ElementKind::Checkbox));
        let page = Page { tree, onload: None };
        let a = Client::load(&page, Role::Leader, ClientConfig::default()).unwrap();
        let mut b = Client::load(&page, Role::Leader, ClientConfig::default()).unwrap();
        assert_eq!(a.state_hash(), b.state_hash());
        b.set_state("cb", "checked", &Value::Bool(true)).unwrap();
        assert_ne!(a.state_hash(), b.state_hash());
    }
}
