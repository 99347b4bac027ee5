//! Per-run measurement: one record per finished operation plus per-second
//! series for throughput, latency, staleness and replica counts.

use std::collections::BTreeMap;

use crate::cluster::msg::Outcome;
use crate::sim::SimTime;

/// How the operation's latency should be bucketed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Write,
    Read,
    Other,
}

/// Terminal state of one client-visible operation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OpResult {
    Done(Outcome),
    /// No reply inside the client timeout (request or reply lost).
    Timeout,
}

impl OpResult {
    pub fn is_ok(&self) -> bool {
        matches!(self, OpResult::Done(o) if o.is_ok())
    }
}

/// One finished client operation, as the gateway saw it.
#[derive(Clone, Debug)]
pub struct OpRecord {
    pub req: u64,
    pub client: u64,
    pub class: String,
    pub function: String,
    pub instance: u64,
    /// Session token, 0 when the op is not session-bound.
    pub session: u64,
    pub gateway: u16,
    pub issued_ms: SimTime,
    pub finished_ms: SimTime,
    pub result: OpResult,
    /// Admission / start instants at the executing site (0 = never got there).
    pub arrival_ms: SimTime,
    pub start_ms: SimTime,
    pub kind: OpKind,
    /// Monotone payload counter: the value written, or the value a read
    /// returned (0 when not applicable).
    pub value: u64,
}

/// One second of one function's traffic.
#[derive(Clone, Debug, Default)]
pub struct FnSecond {
    pub committed: u64,
    pub failed: u64,
    /// Gateway-observed latencies of committed ops, ms.
    pub latencies: Vec<u64>,
}

/// One second of one class's replication health.
#[derive(Clone, Debug, Default)]
pub struct ClassSecond {
    pub staleness_max_ms: u64,
    pub replica_count: u32,
}

#[derive(Default)]
pub struct Metrics {
    pub ops: Vec<OpRecord>,
    /// Keyed by (second, "class/function").
    pub fn_seconds: BTreeMap<(u64, String), FnSecond>,
    /// Keyed by (second, class).
    pub class_seconds: BTreeMap<(u64, String), ClassSecond>,
}

impl Metrics {
    pub fn record(&mut self, rec: OpRecord) {
        let sec = rec.finished_ms / 1000;
        let key = (sec, format!("{}/{}", rec.class, rec.function));
        let bucket = self.fn_seconds.entry(key).or_default();
        if rec.result.is_ok() {
            bucket.committed += 1;
            bucket
                .latencies
                .push(rec.finished_ms.saturating_sub(rec.issued_ms));
        } else {
            bucket.failed += 1;
        }
        self.ops.push(rec);
    }

    /// Committed ops of `class/function` finishing in `[from_sec, to_sec)`.
    pub fn committed_between(&self, class_fn: &str, from_sec: u64, to_sec: u64) -> u64 {
        (from_sec..to_sec)
            .filter_map(|s| self.fn_seconds.get(&(s, class_fn.to_string())))
            .map(|b| b.committed)
            .sum()
    }

    /// Per-second committed counts for one function over `[0, horizon_sec)`.
    pub fn committed_series(&self, class_fn: &str, horizon_sec: u64) -> Vec<u64> {
        (0..horizon_sec)
            .map(|s| {
                self.fn_seconds
                    .get(&(s, class_fn.to_string()))
                    .map_or(0, |b| b.committed)
            })
            .collect()
    }
}

/// p50 of a latency sample (0 for an empty sample).
pub fn p50(samples: &[u64]) -> u64 {
    if samples.is_empty() {
        return 0;
    }
    let mut v = samples.to_vec();
    v.sort_unstable();
    v[(v.len() - 1) / 2]
}

/// Payload convention for monotone write/read checks: a bare u64.
pub fn counter_value(n: u64) -> Vec<u8> {
    n.to_be_bytes().to_vec()
}

/// Inverse of [`counter_value`]; 0 for anything else (including empty).
pub fn parse_counter(bytes: &[u8]) -> u64 {
    match <[u8; 8]>::try_from(bytes) {
        Ok(arr) => u64::from_be_bytes(arr),
        Err(_) => 0,
    }
}
