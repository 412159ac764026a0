//! Run measurements: log size and bandwidth, catch-up and promote pauses,
//! and per-record round trips in ack mode.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::eventlog::LogStats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RttSample {
    pub seq: u64,
    pub sent_ms: f64,
    pub ack_ms: f64,
    pub rtt_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("ack for seq {0} which is not awaiting one")]
    UnknownSeq(u64),
    #[error("ack for seq {seq} at {ack_ms} ms precedes its send at {sent_ms} ms")]
    AckBeforeSend { seq: u64, sent_ms: f64, ack_ms: f64 },
}

/// Collected on the leader side of a run.
#[derive(Debug, Clone, Default)]
pub struct Metrics {
    ack_mode: bool,
    in_flight: BTreeMap<u64, f64>,
    samples: Vec<RttSample>,
    log: Option<LogStats>,
    catchup_ms: Option<u64>,
    promote_ms: Option<u64>,
}

impl Metrics {
    pub fn new(ack_mode: bool) -> Self {
        Metrics { ack_mode, ..Default::default() }
    }

    pub fn ack_mode(&self) -> bool {
        self.ack_mode
    }

    pub fn record_sent(&mut self, seq: u64, now_ms: f64) {
        self.in_flight.insert(seq, now_ms);
    }

    /// Closes the round trip for `seq`. Each sent seq is acked at most once.
    pub fn record_ack(&mut self, seq: u64, now_ms: f64) -> Result<RttSample, MetricsError> {
        let sent_ms = *self.in_flight.get(&seq).ok_or(MetricsError::UnknownSeq(seq))?;
        if now_ms < sent_ms {
            return Err(MetricsError::AckBeforeSend { seq, sent_ms, ack_ms: now_ms });
        }
        self.in_flight.remove(&seq);
        let sample = RttSample { seq, sent_ms, ack_ms: now_ms, rtt_ms: now_ms - sent_ms };
        self.samples.push(sample);
        Ok(sample)
    }

    pub fn samples(&self) -> &[RttSample] {
        &self.samples
    }

    /// Seqs sent but not yet acknowledged.
    pub fn unacked(&self) -> usize {
        self.in_flight.len()
    }

    pub fn set_log_stats(&mut self, stats: LogStats) {
        self.log = Some(stats);
    }

    pub fn set_catchup_ms(&mut self, ms: u64) {
        self.catchup_ms = Some(ms);
    }

    pub fn set_promote_ms(&mut self, ms: u64) {
        self.promote_ms = Some(ms);
    }

    pub fn report(&self) -> MetricsReport {
        let log = self.log.unwrap_or_default();
        let (rtt_mean_ms, rtt_std_ms) = match self.ack_mode {
            true if !self.samples.is_empty() => {
                let (m, s) = mean_std(self.samples.iter().map(|s| s.rtt_ms));
                (Some(m), Some(s))
            }
            _ => (None, None),
        };
        MetricsReport {
            event_count: log.event_count,
            log_bytes: log.bytes,
            bandwidth_kbps: log.bandwidth_kbps,
            catchup_ms: self.catchup_ms,
            promote_ms: self.promote_ms,
            rtt_samples: self.samples.len() as u64,
            rtt_mean_ms,
            rtt_std_ms,
        }
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsReport {
    pub event_count: u64,
    pub log_bytes: u64,
    #[serde(rename = "bandwidthKBps")]
    pub bandwidth_kbps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub catchup_ms: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub promote_ms: Option<u64>,
    pub rtt_samples: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rtt_mean_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rtt_std_ms: Option<f64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields serialize")
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn opt<T: fmt::Display>(v: Option<T>, unit: &str) -> String {
            v.map_or_else(|| "-".to_owned(), |v| format!("{v}{unit}"))
        }
        writeln!(f, "{:<16}{}", "events", self.event_count)?;
        writeln!(f, "{:<16}{}", "log bytes", self.log_bytes)?;
        writeln!(f, "{:<16}{:.3} KB/s", "bandwidth", self.bandwidth_kbps)?;
        writeln!(f, "{:<16}{}", "catch-up", opt(self.catchup_ms, " ms"))?;
        writeln!(f, "{:<16}{}", "promote", opt(self.promote_ms, " ms"))?;
        writeln!(f, "{:<16}{}", "rtt samples", self.rtt_samples)?;
        writeln!(f, "{:<16}{}", "rtt mean", opt(self.rtt_mean_ms.map(|v| format!("{v:.3}")), " ms"))?;
        write!(f, "{:<16}{}", "rtt std", opt(self.rtt_std_ms.map(|v| format!("{v:.3}")), " ms"))
    }
}
