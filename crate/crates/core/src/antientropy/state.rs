//! Per-replica sync bookkeeping and the staleness gate.
//!
//! For every peer replica of a class we track the snapshot time of the last
//! successful exchange — the moment the peer's state we now hold was read,
//! not the moment the exchange finished. Gating on that snapshot time makes
//! the bound tight: if every peer's snapshot is at most delta old, no value
//! visible here can be missing a peer write older than delta.
//!
//! A replica with no peers is trivially never stale. A freshly added peer
//! starts with its registration time as the snapshot, granting it one delta
//! of grace to complete a first exchange.

use std::collections::BTreeMap;

/// Outcome of the staleness gate for one operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateDecision {
    Allow,
    /// Refuse service: some peer has not been heard from within the bound.
    Block { worst_peer: u16, staleness_ms: u64 },
}

impl GateDecision {
    pub fn is_allow(&self) -> bool {
        matches!(self, GateDecision::Allow)
    }
}

/// Sync freshness for one replica of one class.
#[derive(Clone, Debug)]
pub struct ReplicaSyncState {
    replica: u16,
    delta_ms: u64,
    period_ms: u64,
    last_sync: BTreeMap<u16, u64>,
}

impl ReplicaSyncState {
    /// `delta_ms` is the class staleness bound; exchanges are scheduled
    /// every half-delta (never more often than twice a second) so a single
    /// missed round still leaves the bound intact.
    pub fn new(replica: u16, delta_ms: u64) -> ReplicaSyncState {
        ReplicaSyncState {
            replica,
            delta_ms,
            period_ms: (delta_ms / 2).max(500),
            last_sync: BTreeMap::new(),
        }
    }

    pub fn replica(&self) -> u16 {
        self.replica
    }

    pub fn delta_ms(&self) -> u64 {
        self.delta_ms
    }

    pub fn period_ms(&self) -> u64 {
        self.period_ms
    }

    pub fn peers(&self) -> impl Iterator<Item = u16> + '_ {
        self.last_sync.keys().copied()
    }

    /// Register a peer replica. Its initial snapshot time is `now`: the
    /// peer held no divergent state before it existed.
    pub fn note_peer(&mut self, peer: u16, now_ms: u64) {
        self.last_sync.entry(peer).or_insert(now_ms);
    }

    pub fn remove_peer(&mut self, peer: u16) {
        self.last_sync.remove(&peer);
    }

    /// Record a successful exchange with `peer` whose state was snapshot at
    /// `snapshot_ms`. Never moves a peer's freshness backward.
    pub fn record_sync(&mut self, peer: u16, snapshot_ms: u64) {
        let slot = self.last_sync.entry(peer).or_insert(snapshot_ms);
        *slot = (*slot).max(snapshot_ms);
    }

    /// Worst peer staleness right now, or `None` with no peers.
    pub fn worst_staleness(&self, now_ms: u64) -> Option<(u16, u64)> {
        self.last_sync
            .iter()
            .map(|(p, t)| (*p, now_ms.saturating_sub(*t)))
            .max_by_key(|(p, s)| (*s, *p))
    }

    /// Gate an operation under the class bound.
    pub fn gate(&self, now_ms: u64) -> GateDecision {
        self.gate_with_delta(now_ms, self.delta_ms)
    }

    /// Gate under an overridden bound (per-attribute tightening).
    pub fn gate_with_delta(&self, now_ms: u64, delta_ms: u64) -> GateDecision {
        match self.worst_staleness(now_ms) {
            Some((peer, staleness)) if staleness > delta_ms => GateDecision::Block {
                worst_peer: peer,
                staleness_ms: staleness,
            },
            _ => GateDecision::Allow,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_sync_allows() {
        let mut st = ReplicaSyncState::new(0, 10_000);
        st.record_sync(1, 20_000);
        // 3 seconds since the peer snapshot, bound is 10.
        assert_eq!(st.gate(23_000), GateDecision::Allow);
    }

    #[test]
    fn stale_peer_blocks() {
        let mut st = ReplicaSyncState::new(0, 10_000);
        st.record_sync(1, 20_000);
        // 12 seconds since the peer snapshot, bound is 10.
        assert_eq!(
            st.gate(32_000),
            GateDecision::Block { worst_peer: 1, staleness_ms: 12_000 }
        );
    }

    #[test]
    fn boundary_is_inclusive() {
        let mut st = ReplicaSyncState::new(0, 10_000);
        st.record_sync(1, 20_000);
        assert_eq!(st.gate(30_000), GateDecision::Allow);
        assert!(!st.gate(30_001).is_allow());
    }

    #[test]
    fn no_peers_always_allows() {
        let st = ReplicaSyncState::new(0, 5_000);
        assert_eq!(st.gate(1_000_000), GateDecision::Allow);
        assert_eq!(st.worst_staleness(1_000_000), None);
    }

    #[test]
    fn worst_peer_wins() {
        let mut st = ReplicaSyncState::new(0, 10_000);
        st.record_sync(1, 25_000);
        st.record_sync(2, 18_000);
        st.record_sync(3, 29_000);
        assert_eq!(st.worst_staleness(30_000), Some((2, 12_000)));
        assert_eq!(
            st.gate(30_000),
            GateDecision::Block { worst_peer: 2, staleness_ms: 12_000 }
        );
    }

    #[test]
    fn new_peer_gets_grace_from_registration() {
        let mut st = ReplicaSyncState::new(0, 10_000);
        st.note_peer(4, 50_000);
        assert_eq!(st.gate(59_000), GateDecision::Allow);
        assert!(!st.gate(60_001).is_allow());
    }

    #[test]
    fn sync_records_never_regress() {
        let mut st = ReplicaSyncState::new(0, 10_000);
        st.record_sync(1, 40_000);
        st.record_sync(1, 35_000);
        assert_eq!(st.worst_staleness(41_000), Some((1, 1_000)));
    }

    #[test]
    fn override_tightens_bound() {
        let mut st = ReplicaSyncState::new(0, 10_000);
        st.record_sync(1, 20_000);
        assert_eq!(st.gate(26_000), GateDecision::Allow);
        assert!(!st.gate_with_delta(26_000, 5_000).is_allow());
    }

    #[test]
    fn period_is_half_delta_with_floor()  {
        assert_eq!(ReplicaSyncState::new(0, 10_000).period_ms(), 5_000);
        assert_eq!(ReplicaSyncState::new(0, 1_000).period_ms(), 500);
        assert_eq!(ReplicaSyncState::new(0, 600).period_ms(), 500);
    }
}
