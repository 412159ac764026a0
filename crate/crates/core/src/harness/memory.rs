use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use super::peer::{Peer, PeerError};
use crate::coordinator::{ConnId, Outbound, Phase, Session, SessionConfig, SessionError};
use crate::protocol::{EventRecord, Message, Payload, PendingTimer, TimerKind};
use crate::workload::{Step, Workload};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("client {conn}: {error}")]
    Peer { conn: ConnId, error: PeerError },
    #[error("no leader to run {0}")]
    NoLeader(&'static str),
    #[error("promote needs a synced follower; session is in {0:?}")]
    CannotPromote(Phase),
    #[error("coordinator refused connection: {0}")]
    Refused(SessionError),
}

/// A timer that was scheduled on the old leader when promotion started.
#[derive(Debug, Clone, PartialEq)]
pub struct CarriedTimer {
    pub hash: String,
    pub delay: u64,
    pub kind: TimerKind,
    pub set_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromoteReport {
    pub old_leader: ConnId,
    pub new_leader: ConnId,
    pub at_ms: u64,
    pub pending: Vec<PendingTimer>,
    pub carried: Vec<CarriedTimer>,
    /// What the coordinator said to an event from the old leader sent
    /// while the swap was in flight.
    pub race_rejection: Option<SessionError>,
}

/// Coordinator session and clients in one thread, messages passed
/// through in-memory queues in the order the sockets would carry them.
/// Time is virtual and advanced only by `timer-advance` steps.
#[derive(Debug)]
pub struct Harness {
    session: Session,
    peers: BTreeMap<ConnId, Peer>,
    queue: VecDeque<(ConnId, Message)>,
    next_conn: ConnId,
    now_ms: u64,
    rejections: Vec<(ConnId, &'static str, SessionError)>,
}

impl Harness {
    pub fn new(config: SessionConfig) -> Self {
        Harness {
            session: Session::new(config, 0),
            peers: BTreeMap::new(),
            queue: VecDeque::new(),
            next_conn: 1,
            now_ms: 0,
            rejections: Vec::new(),
        }
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn peer(&self, conn: ConnId) -> &Peer {
        &self.peers[&conn]
    }

    pub fn leader(&self) -> Option<ConnId> {
        self.session.active_leader()
    }

    pub fn follower(&self) -> Option<ConnId> {
        self.session.snapshot().follower
    }

    /// Messages the coordinator refused, with the reason.
    pub fn rejections(&self) -> &[(ConnId, &'static str, SessionError)] {
        &self.rejections
    }

    pub fn connect(&mut self, peer: Peer) -> Result<ConnId, HarnessError> {
        let conn = self.next_conn;
        self.next_conn += 1;
        let hello = peer.hello();
        self.peers.insert(conn, peer);
        let outs = match self.session.on_connect(conn, self.now_ms) {
            Ok(outs) => outs,
            Err(e) => {
                self.peers.remove(&conn);
                return Err(HarnessError::Refused(e));
            }
        };
        self.queue.push_back((conn, hello));
        self.deliver(outs)?;
        let now = self.now_ms;
        if let Some(client) = self.peers.get_mut(&conn).and_then(Peer::client_mut) {
            client.sync_clock(now);
        }
        self.pump()?;
        Ok(conn)
    }

    pub fn disconnect(&mut self, conn: ConnId) -> Result<(), HarnessError> {
        self.peers.remove(&conn);
        let outs = self.session.on_disconnect(conn, self.now_ms);
        self.deliver(outs)?;
        self.pump()
    }

    pub fn run(&mut self, workload: &Workload) -> Result<(), HarnessError> {
        workload.steps.iter().try_for_each(|s| self.run_step(s).map(|_| ()))
    }

    /// Runs one step on the current leader. Returns the promotion report
    /// for `promote` steps.
    pub fn run_step(&mut self, step: &Step) -> Result<Option<PromoteReport>, HarnessError> {
        match step {
            Step::Promote => return self.promote(false).map(Some),
            Step::TimerAdvance(ms) => {
                self.now_ms += ms;
                let conns: Vec<ConnId> = self.peers.keys().copied().collect();
                for conn in conns {
                    if self.peers[&conn].client().is_some() {
                        let out = self.with_peer(conn, |p| p.run_step(step, 0.0))?;
                        self.queue.extend(out.into_iter().map(|m| (conn, m)));
                    }
                }
            }
            _ => {
                let conn = self.leader().ok_or(HarnessError::NoLeader("step"))?;
                let out = self.with_peer(conn, |p| p.run_step(step, 0.0))?;
                self.queue.extend(out.into_iter().map(|m| (conn, m)));
            }
        }
        self.pump()?;
        Ok(None)
    }

    /// Presses promote on the leader and runs the swap to completion. With
    /// `race`, the old leader also fires an event after its promote request
    /// reached the coordinator, as a user clicking during the swap would.
    pub fn promote(&mut self, race: bool) -> Result<PromoteReport, HarnessError> {
        let phase = self.session.phase();
        if phase != Phase::Mvx {
            return Err(HarnessError::CannotPromote(phase));
        }
        let old_leader = self.leader().ok_or(HarnessError::NoLeader("promote"))?;
        let carried: Vec<CarriedTimer> = self.peers[&old_leader]
            .client()
            .expect("leader is loaded")
            .clock()
            .scheduled()
            .map(|(at, t)| CarriedTimer {
                hash: t.hash.clone(),
                delay: t.delay,
                kind: t.kind,
                set_at_ms: at - t.delay,
            })
            .collect();
        let out = self.with_peer(old_leader, |p| p.run_step(&Step::Promote, 0.0))?;
        let mut pending = Vec::new();
        for msg in out {
            if let Message::PromoteRequest { pending_timers } = &msg {
                pending = pending_timers.clone();
            }
            self.queue.push_back((old_leader, msg));
        }
        let mut race_rejection = None;
        while let Some((conn, msg)) = self.queue.pop_front() {
            let is_promote = matches!(msg, Message::PromoteRequest { .. });
            let outs = self.submit(conn, msg);
            if is_promote && race {
                let click = EventRecord::dom_event("onclick", "sid-1", Payload::new()).with_seq(1);
                race_rejection = self.inject(old_leader, Message::Event { record: click }).err();
            }
            self.deliver(outs)?;
        }
        let new_leader = self.leader().unwrap_or(old_leader);
        Ok(PromoteReport { old_leader, new_leader, at_ms: self.now_ms, pending, carried, race_rejection })
    }

    /// Sends `msg` to the coordinator as if from `conn`, bypassing its
    /// client, and delivers whatever results.
    pub fn inject(&mut self, conn: ConnId, msg: Message) -> Result<(), SessionError> {
        let outs = self.session.handle(conn, msg, self.now_ms)?;
        self.deliver(outs).map_err(|e| SessionError::Invalid(e.to_string()))?;
        Ok(())
    }

    fn submit(&mut self, conn: ConnId, msg: Message) -> Vec<Outbound> {
        let tag = msg.tag();
        match self.session.handle(conn, msg, self.now_ms) {
            Ok(outs) => outs,
            Err(e) => {
                log::debug!("coordinator refused {tag} from {conn}: {e}");
                self.rejections.push((conn, tag, e));
                vec![]
            }
        }
    }

    fn pump(&mut self) -> Result<(), HarnessError> {
        while let Some((conn, msg)) = self.queue.pop_front() {
            let outs = self.submit(conn, msg);
            self.deliver(outs)?;
        }
        Ok(())
    }

    fn deliver(&mut self, outs: Vec<Outbound>) -> Result<(), HarnessError> {
        for out in outs {
            match out {
                Outbound::Send(conn, msg) => {
                    if !self.peers.contains_key(&conn) {
                        continue;
                    }
                    let replies = self.with_peer(conn, |p| p.receive(msg, 0.0))?;
                    self.queue.extend(replies.into_iter().map(|m| (conn, m)));
                }
                Outbound::Close(conn) => {
                    self.peers.remove(&conn);
                }
            }
        }
        Ok(())
    }

    fn with_peer<T>(
        &mut self,
        conn: ConnId,
        f: impl FnOnce(&mut Peer) -> Result<T, PeerError>,
    ) -> Result<T, HarnessError> {
        let peer = self.peers.get_mut(&conn).expect("live connection");
        f(peer).map_err(|error| HarnessError::Peer { conn, error })
    }
}
