//! End-to-end runs of a workload: coordinator and two simulated clients in
//! one process, each on its own threads, talking over loopback sockets.

use std::fmt;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::str::FromStr;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::coordinator::{ServeError, Server, ServerConfig, ServerHandle, SessionConfig};
use crate::eventlog::{EventLog, LogMark, LogStats};
use crate::harness::{first_divergence, NetClient, Peer, PeerError};
use crate::metrics::{Metrics, MetricsReport};
use crate::protocol::Role;
use crate::simclient::{ClientConfig, Page};
use crate::workload::{Step, Workload};

const WAIT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// One client, no follower: how fast the log grows.
    RecordOnly,
    /// Half the workload, then a follower joins and takes over.
    Update,
    /// Both clients live from the start, follower acks timed by the leader.
    MvxRtt,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::RecordOnly, Scenario::Update, Scenario::MvxRtt];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::RecordOnly => "record-only",
            Scenario::Update => "update",
            Scenario::MvxRtt => "mvx-rtt",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| format!("unknown scenario {s:?} (expected record-only, update or mvx-rtt)"))
    }
}

#[derive(Debug, Clone)]
pub struct SimulateConfig {
    pub scenario: Scenario,
    pub page: Page,
    pub seed: u64,
    /// Relay acks in every scenario, not just `mvx-rtt`.
    pub ack: bool,
    /// Loopback port for the coordinator; 0 picks a free one.
    pub port: u16,
    pub log_dir: Option<PathBuf>,
}

impl SimulateConfig {
    pub fn new(scenario: Scenario, page: Page) -> Self {
        SimulateConfig { scenario, page, seed: 0, ack: false, port: 0, log_dir: None }
    }
}

#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub scenario: Scenario,
    pub report: MetricsReport,
    /// Log growth from the end of page load to the end of the workload,
    /// over the workload's virtual duration.
    pub log_stats: LogStats,
    pub leader_hash: String,
    /// `None` in `record-only`.
    pub follower_hash: Option<String>,
    pub log: EventLog,
}

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("clients diverged at seq {seq:?}: {detail}")]
    Divergence { seq: Option<u64>, detail: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Serve(#[from] ServeError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl SimulateError {
    fn timeout(what: &str) -> Self {
        SimulateError::Protocol(format!("timed out waiting for {what}"))
    }
}

/// Runs `workload` under `config.scenario` and reports what was measured.
pub fn simulate(workload: &Workload, config: &SimulateConfig) -> Result<SimulateOutcome, SimulateError> {
    let ack = config.ack || config.scenario == Scenario::MvxRtt;
    let server = Server::bind(
        (Ipv4Addr::LOCALHOST, config.port),
        ServerConfig { session: SessionConfig { ack_mode: ack, ..Default::default() }, log_dir: config.log_dir.clone() },
    )?
    .spawn();
    let result = Run::new(&server, workload, config, ack).and_then(|run| run.finish());
    server.shutdown();
    result
}

struct Run<'a> {
    server: &'a ServerHandle,
    workload: &'a Workload,
    config: &'a SimulateConfig,
    ack: bool,
    leader: NetClient,
    follower: Option<NetClient>,
    mark: LogMark,
}

impl<'a> Run<'a> {
    fn new(
        server: &'a ServerHandle,
        workload: &'a Workload,
        config: &'a SimulateConfig,
        ack: bool,
    ) -> Result<Self, SimulateError> {
        let leader = connect(server.addr(), config, config.seed, ack)?;
        if !leader.wait_for(WAIT, |p| p.role() == Some(Role::Leader)) {
            return Err(SimulateError::timeout("the leader role"));
        }
        let loaded = last_seq(&leader)?;
        wait_until(|| server.snapshot().log_len >= loaded, "the load records")?;
        let log = server.log_snapshot().ok_or_else(|| SimulateError::timeout("the log"))?;
        let mark = log.mark(0);
        Ok(Run { server, workload, config, ack, leader, follower: None, mark })
    }

    fn attach_follower(&mut self) -> Result<(), SimulateError> {
        let seed = self.config.seed.wrapping_add(1);
        let follower = connect(self.server.addr(), self.config, seed, self.ack)?;
        if !follower.wait_for(WAIT, |p| p.is_synced() || p.divergence().is_some()) {
            return Err(SimulateError::timeout("the follower to sync"));
        }
        // Both pages share one wall clock; the newcomer starts at the
        // leader's time rather than at its last replayed record.
        let now = self.leader.with(|p| p.client().map(|c| c.now_ms())).flatten().unwrap_or(0);
        follower.with(move |p| p.client_mut().map(|c| c.sync_clock(now)));
        self.follower = Some(follower);
        self.check_divergence()?;
        wait_until(|| self.server.snapshot().catchup_ms.is_some(), "the coordinator to see Synced")
    }

    fn finish(mut self) -> Result<SimulateOutcome, SimulateError> {
        let steps = &self.workload.steps;
        let mut metrics = Metrics::new(self.ack);
        match self.config.scenario {
            Scenario::RecordOnly => self.run_steps(steps)?,
            Scenario::MvxRtt => {
                self.attach_follower()?;
                self.run_steps(steps)?;
            }
            Scenario::Update => {
                let split = self.workload.promote_index().unwrap_or(steps.len() / 2);
                let (first, rest) = steps.split_at(split);
                self.run_steps(first)?;
                self.attach_follower()?;
                self.promote()?;
                self.run_steps(rest)?;
            }
        }
        self.quiesce()?;

        let log = self.server.log_snapshot().ok_or_else(|| SimulateError::timeout("the log"))?;
        let log_stats = log.stats_since(self.mark, self.workload.duration_ms());
        metrics.set_log_stats(log_stats);
        let snapshot = self.server.snapshot();
        if let Some(ms) = snapshot.catchup_ms {
            metrics.set_catchup_ms(ms);
        }
        if let Some(ms) = snapshot.promote_ms {
            metrics.set_promote_ms(ms);
        }
        // Whoever led at the start stamped the sends it made; in mvx-rtt that
        // is the only leader.
        let samples = self.leader.with(|p| p.metrics().clone()).ok_or_else(|| SimulateError::timeout("metrics"))?;
        let mut report = metrics.report();
        let leader_report = samples.report();
        report.rtt_samples = leader_report.rtt_samples;
        report.rtt_mean_ms = leader_report.rtt_mean_ms;
        report.rtt_std_ms = leader_report.rtt_std_ms;

        let leader_hash = state_hash(&self.leader)?;
        let follower_hash = match &self.follower {
            Some(f) => Some(state_hash(f)?),
            None => None,
        };
        if let Some(fh) = &follower_hash {
            if *fh != leader_hash {
                let a = trail(&self.leader)?;
                let b = trail(self.follower.as_ref().expect("has follower"))?;
                return Err(SimulateError::Divergence {
                    seq: first_divergence(&a, &b).or_else(|| first_divergence(&b, &a)),
                    detail: format!("final state hashes {leader_hash} and {fh} differ"),
                });
            }
        }
        Ok(SimulateOutcome { scenario: self.config.scenario, report, log_stats, leader_hash, follower_hash, log })
    }

    /// The client that currently leads.
    fn current_leader(&self) -> Result<&NetClient, SimulateError> {
        if self.leader.with(|p| p.role()).flatten() == Some(Role::Leader) {
            return Ok(&self.leader);
        }
        self.follower.as_ref().ok_or_else(|| SimulateError::Protocol("no client holds the leader role".into()))
    }

    fn run_steps(&self, steps: &[Step]) -> Result<(), SimulateError> {
        for step in steps {
            match step {
                Step::Promote => continue,
                Step::TimerAdvance(_) => {
                    for c in std::iter::once(&self.leader).chain(&self.follower) {
                        c.step(step).map_err(|e| self.step_error(e))?;
                    }
                }
                _ => self.current_leader()?.step(step).map_err(|e| self.step_error(e))?,
            }
        }
        Ok(())
    }

    fn step_error(&self, e: PeerError) -> SimulateError {
        match e {
            PeerError::Divergence { seq, error } => SimulateError::Divergence { seq: Some(seq), detail: error.to_string() },
            e => SimulateError::Protocol(e.to_string()),
        }
    }

    fn promote(&mut self) -> Result<(), SimulateError> {
        let before = self.server.snapshot();
        self.leader.step(&Step::Promote).map_err(|e| self.step_error(e))?;
        wait_until(
            || {
                let s = self.server.snapshot();
                s.swaps_completed > before.swaps_completed || s.swaps_aborted > before.swaps_aborted
            },
            "the role swap",
        )?;
        if self.server.snapshot().swaps_aborted > before.swaps_aborted {
            return Err(SimulateError::Protocol("role swap aborted".into()));
        }
        for c in std::iter::once(&self.leader).chain(&self.follower) {
            if !c.wait_for(WAIT, |p| !p.is_swapping()) {
                return Err(SimulateError::timeout("the swap commit"));
            }
        }
        Ok(())
    }

    /// Waits until every record is logged and applied, and every ack is in.
    fn quiesce(&self) -> Result<(), SimulateError> {
        let leader = self.current_leader()?;
        let target = last_seq(leader)?;
        wait_until(|| self.server.snapshot().log_len >= target, "the coordinator to log every record")?;
        if let Some(f) = &self.follower {
            for c in [&self.leader, f] {
                if !c.wait_for(WAIT, move |p| p.divergence().is_some() || p.client().is_some_and(|c| c.last_seq() >= target)) {
                    return Err(SimulateError::timeout("the follower to apply every record"));
                }
            }
            self.check_divergence()?;
        }
        if self.config.scenario == Scenario::MvxRtt {
            let expected = target - self.mark.len;
            if !self.leader.wait_for(WAIT, move |p| p.metrics().samples().len() as u64 >= expected) {
                return Err(SimulateError::timeout("every ack"));
            }
        }
        Ok(())
    }

    fn check_divergence(&self) -> Result<(), SimulateError> {
        for c in std::iter::once(&self.leader).chain(&self.follower) {
            if let Some(PeerError::Divergence { seq, error }) = c.with(|p| p.divergence().cloned()).flatten() {
                return Err(SimulateError::Divergence { seq: Some(seq), detail: error.to_string() });
            }
        }
        Ok(())
    }
}

fn connect(addr: SocketAddr, config: &SimulateConfig, seed: u64, ack: bool) -> Result<NetClient, SimulateError> {
    let peer = Peer::new(config.page.clone(), ClientConfig { seed, ..Default::default() }, ack).with_trail();
    Ok(NetClient::connect(addr, peer)?)
}

fn last_seq(c: &NetClient) -> Result<u64, SimulateError> {
    c.with(|p| p.client().map(|c| c.last_seq()))
        .flatten()
        .ok_or_else(|| SimulateError::timeout("the client to load"))
}

fn state_hash(c: &NetClient) -> Result<String, SimulateError> {
    c.with(|p| p.client().map(|c| c.state_hash()))
        .flatten()
        .ok_or_else(|| SimulateError::timeout("a state hash"))
}

fn trail(c: &NetClient) -> Result<Vec<(u64, String)>, SimulateError> {
    c.with(|p| p.client().map(|c| c.trail().to_vec()))
        .flatten()
        .ok_or_else(|| SimulateError::timeout("a state trail"))
}

fn wait_until(cond: impl Fn() -> bool, what: &str) -> Result<(), SimulateError> {
    let deadline = Instant::now() + WAIT;
    while !cond() {
        if Instant::now() >= deadline {
            return Err(SimulateError::timeout(what));
        }
        thread::sleep(Duration::from_millis(1));
    }
    Ok(())
}
