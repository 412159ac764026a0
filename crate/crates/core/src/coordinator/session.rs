use serde::Serialize;
use thiserror::Error;

use crate::eventlog::{EventLog, LogError};
use crate::protocol::{EventRecord, Message, PendingTimer, RecordKind, Role};

/// Identifies one client connection for the lifetime of the coordinator.
pub type ConnId = u64;

/// Default time both clients get to acknowledge a role swap.
pub const SWAP_TIMEOUT_MS: u64 = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Phase {
    SingleVersion,
    StateTransfer,
    Mvx,
    Swapping,
}

impl Phase {
    /// The complete set of phase changes a session may make.
    pub fn can_transition_to(self, next: Phase) -> bool {
        use Phase::*;
        matches!(
            (self, next),
            (SingleVersion, StateTransfer)
                | (StateTransfer, Mvx)
                | (Mvx, Swapping)
                | (Swapping, Mvx)
                | (Mvx, SingleVersion)
                | (StateTransfer, SingleVersion)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outbound {
    Send(ConnId, Message),
    /// Close the connection after flushing anything queued before it.
    Close(ConnId),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("session already has a leader and a follower")]
    SessionFull,
    #[error("connection {0} does not hold the leader role")]
    NotLeader(ConnId),
    #[error("connection {0} does not hold the follower role")]
    NotFollower(ConnId),
    #[error("{input} is not accepted in phase {phase:?}")]
    Phase { phase: Phase, input: &'static str },
    #[error("random value {0} outside [0, 1)")]
    Range(f64),
    #[error("connection {0} already joined")]
    AlreadyJoined(ConnId),
    #[error("clients may not send {0}")]
    Unexpected(&'static str),
    #[error("ack for seq {0} which was never sent")]
    UnknownSeq(u64),
    #[error("invalid message: {0}")]
    Invalid(String),
    #[error("session has ended")]
    Ended,
    #[error(transparent)]
    Log(#[from] LogErrorKind),
}

/// Cloneable projection of [`LogError`] for use in session results.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("event log rejected record: {0}")]
pub struct LogErrorKind(String);

impl From<LogError> for SessionError {
    fn from(e: LogError) -> Self {
        SessionError::Log(LogErrorKind(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EndReason {
    /// The only client, the leader, went away.
    LeaderLeft,
    /// The leader went away while a follower was attached.
    LeaderLost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionConfig {
    /// Relay follower acknowledgements to the leader.
    pub ack_mode: bool,
    pub swap_timeout_ms: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig { ack_mode: false, swap_timeout_ms: SWAP_TIMEOUT_MS }
    }
}

#[derive(Debug, Clone)]
struct Swap {
    old_leader: ConnId,
    old_follower: ConnId,
    marker: u64,
    started_ms: u64,
    pending: Vec<PendingTimer>,
    leader_acked: bool,
    follower_acked: bool,
}

/// Read-only view of a session, cheap to copy out of the executor.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionSnapshot {
    pub phase: Phase,
    pub leader: Option<ConnId>,
    pub follower: Option<ConnId>,
    pub log_len: u64,
    pub log_bytes: u64,
    pub random_seen: u64,
    pub follower_connected_ms: Option<u64>,
    pub catchup_ms: Option<u64>,
    pub promote_ms: Option<u64>,
    pub last_promote_ms: Option<u64>,
    pub swaps_completed: u64,
    pub swaps_aborted: u64,
    pub ended: Option<EndReason>,
}

/// Per-page coordinator state. Each input is processed to completion and
/// returns the messages to deliver, in order.
#[derive(Debug)]
pub struct Session {
    config: SessionConfig,
    phase: Phase,
    leader: Option<ConnId>,
    follower: Option<ConnId>,
    log: EventLog,
    random_seen: u64,
    last_promote_ms: Option<u64>,
    swap: Option<Swap>,
    follower_connected_ms: Option<u64>,
    catchup_ms: Option<u64>,
    promote_ms: Option<u64>,
    swaps_completed: u64,
    swaps_aborted: u64,
    transitions: Vec<(Phase, Phase)>,
    ended: Option<EndReason>,
}

impl Session {
    pub fn new(config: SessionConfig, now_ms: u64) -> Self {
        Session {
            config,
            phase: Phase::SingleVersion,
            leader: None,
            follower: None,
            log: EventLog::new(now_ms),
            random_seen: 0,
            last_promote_ms: None,
            swap: None,
            follower_connected_ms: None,
            catchup_ms: None,
            promote_ms: None,
            swaps_completed: 0,
            swaps_aborted: 0,
            transitions: Vec::new(),
            ended: None,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn config(&self) -> SessionConfig {
        self.config
    }

    /// The connection currently allowed to submit records. `None` while
    /// swapping and before anyone joins.
    pub fn active_leader(&self) -> Option<ConnId> {
        if self.phase == Phase::Swapping {
            None
        } else {
            self.leader
        }
    }

    pub fn role_of(&self, conn: ConnId) -> Option<Role> {
        if self.leader == Some(conn) {
            Some(Role::Leader)
        } else if self.follower == Some(conn) {
            Some(Role::Follower)
        } else {
            None
        }
    }

    pub fn is_ended(&self) -> bool {
        self.ended.is_some()
    }

    /// Every phase change taken so far, oldest first.
    pub fn transitions(&self) -> &[(Phase, Phase)] {
        &self.transitions
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            phase: self.phase,
            leader: self.leader,
            follower: self.follower,
            log_len: self.log.len(),
            log_bytes: self.log.byte_size(),
            random_seen: self.random_seen,
            follower_connected_ms: self.follower_connected_ms,
            catchup_ms: self.catchup_ms,
            promote_ms: self.promote_ms,
            last_promote_ms: self.last_promote_ms,
            swaps_completed: self.swaps_completed,
            swaps_aborted: self.swaps_aborted,
            ended: self.ended,
        }
    }

    /// Dispatches one decoded client message.
    pub fn handle(&mut self, conn: ConnId, msg: Message, now_ms: u64) -> Result<Vec<Outbound>, SessionError> {
        if self.ended.is_some() {
            return Err(SessionError::Ended);
        }
        msg.validate().map_err(|v| SessionError::Invalid(v.to_string()))?;
        match msg {
            Message::Hello { .. } => self.on_connect(conn, now_ms),
            Message::Event { record } => self.on_leader_event(conn, record),
            Message::RandomBatch { values } => self.on_random_refill(conn, &values),
            Message::Synced {} => self.on_synced(conn, now_ms),
            Message::PromoteRequest { pending_timers } => self.on_promote(conn, pending_timers, now_ms),
            Message::Ack { seq } => self.on_ack(conn, seq, now_ms),
            Message::Bye {} => {
                let mut out = self.on_disconnect(conn, now_ms);
                out.push(Outbound::Close(conn));
                Ok(out)
            }
            other @ (Message::RoleAssign { .. } | Message::ReplayBegin { .. } | Message::RoleSwap { .. }) => {
                Err(SessionError::Unexpected(other.tag()))
            }
        }
    }

    /// Role assignment on handshake: first client leads, second follows and
    /// immediately receives the whole log.
    pub fn on_connect(&mut self, conn: ConnId, now_ms: u64) -> Result<Vec<Outbound>, SessionError> {
        if self.role_of(conn).is_some() {
            return Err(SessionError::AlreadyJoined(conn));
        }
        if self.leader.is_none() {
            self.leader = Some(conn);
            return Ok(vec![Outbound::Send(conn, Message::RoleAssign { role: Role::Leader })]);
        }
        if self.follower.is_some() || self.phase != Phase::SingleVersion {
            return Err(SessionError::SessionFull);
        }
        self.follower = Some(conn);
        self.follower_connected_ms = Some(now_ms);
        self.catchup_ms = None;
        self.transition(Phase::StateTransfer);
        let mut out = Vec::with_capacity(self.log.len() as usize + 2);
        out.push(Outbound::Send(conn, Message::RoleAssign { role: Role::Follower }));
        out.push(Outbound::Send(conn, Message::ReplayBegin { count: self.log.len() }));
        out.extend(
            self.log
                .replay_iter()
                .map(|r| Outbound::Send(conn, Message::Event { record: r.clone() })),
        );
        Ok(out)
    }

    /// Appends a leader record under the next seq, forwarding it when a
    /// follower is attached.
    pub fn on_leader_event(&mut self, conn: ConnId, record: EventRecord) -> Result<Vec<Outbound>, SessionError> {
        self.require_leader(conn)?;
        if record.kind == RecordKind::RandomRefill {
            return Err(SessionError::Unexpected("Event(RandomRefill)"));
        }
        self.append_and_forward(record)
    }

    pub fn on_random_refill(&mut self, conn: ConnId, values: &[f64]) -> Result<Vec<Outbound>, SessionError> {
        self.require_leader(conn)?;
        if let Some(v) = values.iter().find(|v| !(0.0..1.0).contains(*v)) {
            return Err(SessionError::Range(*v));
        }
        if values.is_empty() {
            return Err(SessionError::Invalid("empty random batch".into()));
        }
        let wall = self.log.records().last().map_or(0, |r| r.wall_clock_ms);
        let out = self.append_and_forward(EventRecord::random_refill(values).at(wall))?;
        self.random_seen += values.len() as u64;
        Ok(out)
    }

    pub fn on_synced(&mut self, conn: ConnId, now_ms: u64) -> Result<Vec<Outbound>, SessionError> {
        if self.phase != Phase::StateTransfer {
            return Err(SessionError::Phase { phase: self.phase, input: "Synced" });
        }
        if self.follower != Some(conn) {
            return Err(SessionError::NotFollower(conn));
        }
        self.transition(Phase::Mvx);
        let connected = self.follower_connected_ms.unwrap_or(now_ms);
        self.catchup_ms = Some(now_ms.saturating_sub(connected));
        Ok(vec![Outbound::Send(conn, Message::Synced {})])
    }

    pub fn on_promote(
        &mut self,
        conn: ConnId,
        pending: Vec<PendingTimer>,
        now_ms: u64,
    ) -> Result<Vec<Outbound>, SessionError> {
        if self.phase != Phase::Mvx {
            return Err(SessionError::Phase { phase: self.phase, input: "PromoteRequest" });
        }
        self.require_leader(conn)?;
        let old_follower = self.follower.expect("Mvx implies a follower");
        let marker = self.log.len() + 1;
        self.transition(Phase::Swapping);
        self.swap = Some(Swap {
            old_leader: conn,
            old_follower,
            marker,
            started_ms: now_ms,
            pending: pending.clone(),
            leader_acked: false,
            follower_acked: false,
        });
        Ok(vec![
            Outbound::Send(conn, Message::RoleSwap { new_role: Role::Follower, pending_timers: vec![] }),
            Outbound::Send(old_follower, Message::RoleSwap { new_role: Role::Leader, pending_timers: pending }),
        ])
    }

    /// Acks serve two purposes: the swap handshake (seq = swap marker) and,
    /// in ack mode, per-record receipts relayed to the leader.
    pub fn on_ack(&mut self, conn: ConnId, seq: u64, now_ms: u64) -> Result<Vec<Outbound>, SessionError> {
        if let Some(swap) = self.swap.as_mut() {
            if seq == swap.marker {
                if conn == swap.old_leader {
                    swap.leader_acked = true;
                } else if conn == swap.old_follower {
                    swap.follower_acked = true;
                } else {
                    return Err(SessionError::UnknownSeq(seq));
                }
                if swap.leader_acked && swap.follower_acked {
                    return Ok(self.complete_swap(now_ms));
                }
                return Ok(vec![]);
            }
        }
        if seq == 0 || seq > self.log.len() {
            return Err(SessionError::UnknownSeq(seq));
        }
        if self.follower != Some(conn) || !self.config.ack_mode {
            return Ok(vec![]);
        }
        // During a swap the old leader still owns the send timestamps.
        let to = match &self.swap {
            Some(swap) => swap.old_leader,
            None => self.leader.expect("follower implies leader"),
        };
        Ok(vec![Outbound::Send(to, Message::Ack { seq })])
    }

    pub fn on_disconnect(&mut self, conn: ConnId, now_ms: u64) -> Vec<Outbound> {
        if self.ended.is_some() {
            return vec![];
        }
        let mut out = Vec::new();
        if let Some(swap) = self.swap.clone() {
            if conn == swap.old_leader {
                // The user asked to move to the new version; finish for the survivor.
                out.extend(self.complete_swap(now_ms));
            } else if conn == swap.old_follower {
                out.extend(self.abort_swap());
            } else {
                return out;
            }
        }
        if self.follower == Some(conn) {
            self.follower = None;
            self.follower_connected_ms = None;
            self.transition(Phase::SingleVersion);
        } else if self.leader == Some(conn) {
            self.leader = None;
            match self.follower.take() {
                None => self.ended = Some(EndReason::LeaderLeft),
                Some(f) => {
                    log::error!("leader {conn} disconnected with follower {f} attached; ending session");
                    self.transition(Phase::SingleVersion);
                    out.push(Outbound::Send(f, Message::Bye {}));
                    out.push(Outbound::Close(f));
                    self.ended = Some(EndReason::LeaderLost);
                }
            }
        }
        out
    }

    /// Aborts a swap whose acknowledgements did not arrive in time.
    pub fn tick(&mut self, now_ms: u64) -> Vec<Outbound> {
        match &self.swap {
            Some(swap) if now_ms.saturating_sub(swap.started_ms) >= self.config.swap_timeout_ms => {
                log::warn!("role swap timed out after {} ms; reverting", now_ms - swap.started_ms);
                self.abort_swap()
            }
            _ => vec![],
        }
    }

    fn complete_swap(&mut self, now_ms: u64) -> Vec<Outbound> {
        let swap = self.swap.take().expect("swap in progress");
        self.leader = Some(swap.old_follower);
        self.follower = Some(swap.old_leader);
        self.promote_ms = Some(now_ms.saturating_sub(swap.started_ms));
        self.last_promote_ms = Some(now_ms);
        self.swaps_completed += 1;
        self.transition(Phase::Mvx);
        let commit = Message::Ack { seq: swap.marker };
        vec![
            Outbound::Send(swap.old_follower, commit.clone()),
            Outbound::Send(swap.old_leader, commit),
        ]
    }

    fn abort_swap(&mut self) -> Vec<Outbound> {
        let swap = self.swap.take().expect("swap in progress");
        self.swaps_aborted += 1;
        self.transition(Phase::Mvx);
        let commit = Message::Ack { seq: swap.marker };
        vec![
            Outbound::Send(
                swap.old_follower,
                Message::RoleSwap { new_role: Role::Follower, pending_timers: vec![] },
            ),
            Outbound::Send(
                swap.old_leader,
                Message::RoleSwap { new_role: Role::Leader, pending_timers: swap.pending },
            ),
            Outbound::Send(swap.old_follower, commit.clone()),
            Outbound::Send(swap.old_leader, commit),
        ]
    }

    fn require_leader(&self, conn: ConnId) -> Result<(), SessionError> {
        if self.active_leader() == Some(conn) {
            Ok(())
        } else {
            Err(SessionError::NotLeader(conn))
        }
    }

    fn append_and_forward(&mut self, mut record: EventRecord) -> Result<Vec<Outbound>, SessionError> {
        record.seq = self.log.len() + 1;
        let forward = match self.phase {
            Phase::StateTransfer | Phase::Mvx => self.follower,
            _ => None,
        };
        match forward {
            Some(f) => {
                self.log.append(record.clone())?;
                Ok(vec![Outbound::Send(f, Message::Event { record })])
            }
            None => {
                self.log.append(record)?;
                Ok(vec![])
            }
        }
    }

    fn transition(&mut self, next: Phase) {
        assert!(
            self.phase.can_transition_to(next),
            "illegal phase transition {:?} -> {next:?}",
            self.phase
        );
        self.transitions.push((self.phase, next));
        self.phase = next;
    }
}
