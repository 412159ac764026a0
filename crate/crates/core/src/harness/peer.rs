use serde_json::Value;
use thiserror::Error;

use crate::metrics::Metrics;
use crate::protocol::{Message, Payload, Role};
use crate::simclient::{Client, ClientConfig, Page, SimError};
use crate::workload::Step;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PeerError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("record {seq} diverged: {error}")]
    Divergence { seq: u64, error: SimError },
    #[error("coordinator sent {0}, which clients never receive")]
    Unexpected(&'static str),
    #[error("no role assigned yet")]
    NotLoaded,
}

/// The protocol side of one simulated client: what the in-page shim does
/// around the [`Client`] (handshake, replay accounting, swap handshake,
/// acks).
#[derive(Debug)]
pub struct Peer {
    page: Page,
    config: ClientConfig,
    ack_mode: bool,
    trail: bool,
    client: Option<Client>,
    replay_remaining: Option<u64>,
    synced: bool,
    swap_marker: Option<u64>,
    closed: bool,
    metrics: Metrics,
    divergence: Option<PeerError>,
}

impl Peer {
    pub fn new(page: Page, config: ClientConfig, ack_mode: bool) -> Self {
        Peer {
            page,
            config,
            ack_mode,
            trail: false,
            client: None,
            replay_remaining: None,
            synced: false,
            swap_marker: None,
            closed: false,
            metrics: Metrics::new(ack_mode),
            divergence: None,
        }
    }

    /// Records a state hash after every step (see [`Client::enable_trail`]).
    pub fn with_trail(mut self) -> Self {
        self.trail = true;
        self
    }

    pub fn hello(&self) -> Message {
        Message::Hello { client_info: format!("simclient seed={}", self.config.seed) }
    }

    pub fn client(&self) -> Option<&Client> {
        self.client.as_ref()
    }

    pub fn client_mut(&mut self) -> Option<&mut Client> {
        self.client.as_mut()
    }

    pub fn role(&self) -> Option<Role> {
        self.client.as_ref().map(Client::role)
    }

    /// A follower that has applied its whole replay.
    pub fn is_synced(&self) -> bool {
        self.synced
    }

    pub fn is_swapping(&self) -> bool {
        self.swap_marker.is_some()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub(crate) fn mark_closed(&mut self) {
        self.closed = true;
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    /// The first divergence seen while applying records, if any.
    pub fn divergence(&self) -> Option<&PeerError> {
        self.divergence.as_ref()
    }

    /// Handles one coordinator message; returns what to send back.
    pub fn receive(&mut self, msg: Message, now_ms: f64) -> Result<Vec<Message>, PeerError> {
        let mut out = Vec::new();
        match msg {
            Message::RoleAssign { role } => {
                let mut client = Client::load(&self.page, role, self.config)?;
                if self.trail {
                    client.enable_trail();
                }
                self.client = Some(client);
            }
            Message::ReplayBegin { count } => {
                self.replay_remaining = Some(count);
                if count == 0 {
                    self.finish_replay(&mut out);
                }
            }
            Message::Event { record } => {
                if let Some(e) = &self.divergence {
                    return Err(e.clone());
                }
                let seq = record.seq;
                let client = self.client.as_mut().ok_or(PeerError::NotLoaded)?;
                if let Err(error) = client.apply_remote(&record) {
                    let e = PeerError::Divergence { seq, error };
                    self.divergence = Some(e.clone());
                    return Err(e);
                }
                match self.replay_remaining {
                    Some(n) if n > 0 => {
                        self.replay_remaining = Some(n - 1);
                        if n == 1 {
                            self.finish_replay(&mut out);
                        }
                    }
                    _ if self.ack_mode && self.synced => out.push(Message::Ack { seq }),
                    _ => {}
                }
            }
            Message::Synced {} => self.synced = true,
            Message::RoleSwap { new_role, pending_timers } => {
                let client = self.client.as_mut().ok_or(PeerError::NotLoaded)?;
                match new_role {
                    Role::Leader => client.promote(&pending_timers),
                    Role::Follower => {
                        client.demote();
                        self.synced = true;
                    }
                }
                client.set_frozen(true);
                let marker = client.last_seq() + 1;
                self.swap_marker = Some(marker);
                out.push(Message::Ack { seq: marker });
            }
            Message::Ack { seq } if self.swap_marker == Some(seq) => {
                self.swap_marker = None;
                if let Some(client) = self.client.as_mut() {
                    client.set_frozen(false);
                }
            }
            Message::Ack { seq } => {
                if self.ack_mode {
                    if let Err(e) = self.metrics.record_ack(seq, now_ms) {
                        log::debug!("ignoring ack: {e}");
                    }
                }
            }
            Message::Bye {} => self.closed = true,
            Message::Hello { .. } => return Err(PeerError::Unexpected("Hello")),
            Message::RandomBatch { .. } => return Err(PeerError::Unexpected("RandomBatch")),
            Message::PromoteRequest { .. } => return Err(PeerError::Unexpected("PromoteRequest")),
        }
        self.flush(now_ms, &mut out);
        Ok(out)
    }

    fn finish_replay(&mut self, out: &mut Vec<Message>) {
        self.replay_remaining = None;
        out.push(Message::Synced {});
    }

    /// Runs one workload step on this client. Only `timer-advance` is
    /// meaningful on a follower, where it just moves the clock.
    pub fn run_step(&mut self, step: &Step, now_ms: f64) -> Result<Vec<Message>, PeerError> {
        let client = self.client.as_mut().ok_or(PeerError::NotLoaded)?;
        match step {
            Step::Event { element_id, event_type, payload } => {
                client.dispatch_user_event(element_id, event_type, payload)?;
            }
            Step::TimerAdvance(ms) => {
                client.advance_time(*ms)?;
            }
            Step::Create { parent } => {
                let mut payload = Payload::new();
                payload.insert("parent".into(), Value::String(parent.clone()));
                client.dispatch_user_event(parent, "create", &payload)?;
            }
            Step::Set { element_id, field, value } => {
                client.set_state(element_id, field, value)?;
            }
            Step::Select { element_id, start, span } => client.select(element_id, *start, *span)?,
            Step::Promote => {
                client.request_promote()?;
            }
        }
        let mut out = Vec::new();
        self.flush(now_ms, &mut out);
        Ok(out)
    }

    /// Moves the client's outbox to `out`, stamping send times in ack mode.
    fn flush(&mut self, now_ms: f64, out: &mut Vec<Message>) {
        let Some(client) = self.client.as_mut() else { return };
        let msgs = client.take_outbox();
        let logged = |m: &Message| matches!(m, Message::Event { .. } | Message::RandomBatch { .. });
        // Seqs are contiguous, so the batch ends at the client's last seq.
        let mut seq = client.last_seq() - msgs.iter().filter(|m| logged(m)).count() as u64;
        for msg in msgs {
            if logged(&msg) {
                seq += 1;
                if self.ack_mode {
                    self.metrics.record_sent(seq, now_ms);
                }
            }
            out.push(msg);
        }
    }
}
