//! Link model: latency matrix, jitter, partitions, site failures, and the
//! drop-not-delay rule for messages in flight across a partition boundary.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::model::DatacenterProfile;

use super::sched::{Scheduler, SchedulerError, SimTime};
use super::topic::Topic;

/// Dense index of a registered datacenter. At most 64 sites per run so
/// partition groups fit in a bitmask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DcIndex(pub u16);

/// A message between datacenters. `send_time` is stamped by
/// [`Network::send`]; the payload encoding is the length-prefixed record
/// format from [`super::wire`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub src: DcIndex,
    pub dst: DcIndex,
    pub topic: Topic,
    pub payload: Vec<u8>,
    pub send_time: SimTime,
}

/// A scripted partition: the listed groups cannot exchange messages with
/// each other during `[start, end)`. Datacenters absent from every group are
/// unaffected. Healing at `end` is instantaneous.
#[derive(Clone, Debug)]
pub struct Partition {
    pub groups: Vec<u64>,
    pub start: SimTime,
    pub end: SimTime,
}

impl Partition {
    /// True if this partition puts `a` and `b` in different groups.
    fn separates(&self, a: DcIndex, b: DcIndex) -> bool {
        let (ma, mb) = (1u64 << a.0, 1u64 << b.0);
        let ga = self.groups.iter().position(|g| g & ma != 0);
        let gb = self.groups.iter().position(|g| g & mb != 0);
        matches!((ga, gb), (Some(x), Some(y)) if x != y)
    }

    /// True if the active window intersects the closed interval `[t0, t1]`.
    fn active_during(&self, t0: SimTime, t1: SimTime) -> bool {
        self.start <= t1 && t0 < self.end
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("unknown datacenter {0}")]
    UnknownDatacenter(String),
    #[error("partition starting at {start} ms overlaps an existing partition on the same link pair")]
    OverlapWithExistingPartition { start: SimTime },
    #[error("partition start {start} ms is already in the past (now {now} ms)")]
    PastTimestamp { start: SimTime, now: SimTime },
    #[error("partition groups must be non-empty and disjoint")]
    BadGroups,
    #[error("at most 64 datacenters per run")]
    TooManySites,
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
}

pub enum SendOutcome {
    /// Delivery event queued for the given timestamp.
    Scheduled(SimTime),
    /// Link partitioned (or an endpoint dead) at send time; message gone.
    Dropped,
}

/// Inter-datacenter link state shared by one simulation run.
pub struct Network {
    names: Vec<String>,
    index: BTreeMap<String, DcIndex>,
    /// One-way latency, `latency[src][dst]` ms; diagonal is intra-site.
    latency: Vec<Vec<u64>>,
    /// Extra uniform per-message delay `[lo, hi]`, applied atop the matrix.
    jitter: (u64, u64),
    partitions: Vec<Partition>,
    /// Sites that have failed outright (messages to/from are dropped).
    dead_mask: u64,
    /// Per-link FIFO floor: no delivery may be scheduled earlier than the
    /// last one on the same directed link, even when jitter says otherwise.
    fifo_floor: BTreeMap<(u16, u16), SimTime>,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

impl Network {
    /// Build from validated profiles (see [`crate::model::validate_profiles`]).
    /// Sites are indexed in the order given.
    pub fn new(
        profiles: &[DatacenterProfile],
        intra_latency_ms: u64,
        jitter: (u64, u64),
    ) -> Result<Network, NetworkError> {
        if profiles.len() > 64 {
            return Err(NetworkError::TooManySites);
        }
        let names: Vec<String> = profiles.iter().map(|p| p.id.clone()).collect();
        let index: BTreeMap<String, DcIndex> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), DcIndex(i as u16)))
            .collect();
        let n = profiles.len();
        let mut latency = vec![vec![intra_latency_ms; n]; n];
        for (i, p) in profiles.iter().enumerate() {
            for (peer, ms) in &p.region_latency {
                let j = index
                    .get(peer)
                    .ok_or_else(|| NetworkError::UnknownDatacenter(peer.clone()))?;
                latency[i][j.0 as usize] = *ms;
            }
        }
        Ok(Network {
            names,
            index,
            latency,
            jitter,
            partitions: Vec::new(),
            dead_mask: 0,
            fifo_floor: BTreeMap::new(),
            sent: 0,
            delivered: 0,
            dropped: 0,
        })
    }

    pub fn lookup(&self, name: &str) -> Result<DcIndex, NetworkError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| NetworkError::UnknownDatacenter(name.to_string()))
    }

    pub fn name(&self, dc: DcIndex) -> &str {
        &self.names[dc.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn base_latency(&self, a: DcIndex, b: DcIndex) -> u64 {
        self.latency[a.0 as usize][b.0 as usize]
    }

    /// Largest one-way latency in the matrix; used for protocol timeouts.
    pub fn max_latency(&self) -> u64 {
        self.latency
            .iter()
            .flat_map(|r| r.iter().copied())
            .max()
            .unwrap_or(0)
    }

    /// Register a scripted partition. The window must still be in the
    /// future, groups must be disjoint and non-empty, and no other partition
    /// may cover the same link pair during an overlapping window.
    pub fn inject_partition(
        &mut self,
        now: SimTime,
        groups: &[Vec<DcIndex>],
        start: SimTime,
        duration_ms: u64,
    ) -> Result<(), NetworkError> {
        if start < now {
            return Err(NetworkError::PastTimestamp { start, now });
        }
        if groups.len() < 2 || duration_ms == 0 {
            return Err(NetworkError::BadGroups);
        }
        let mut masks = Vec::with_capacity(groups.len());
        let mut all = 0u64;
        for g in groups {
            if g.is_empty() {
                return Err(NetworkError::BadGroups);
            }
            let mut m = 0u64;
            for dc in g {
                m |= 1u64 << dc.0;
            }
            if m & all != 0 {
                return Err(NetworkError::BadGroups);
            }
            all |= m;
            masks.push(m);
        }
        let cand = Partition { groups: masks, start, end: start + duration_ms };
        for p in &self.partitions {
            if p.start < cand.end && cand.start < p.end && cross_pairs_intersect(p, &cand) {
                return Err(NetworkError::OverlapWithExistingPartition { start });
            }
        }
        self.partitions.push(cand);
        Ok(())
    }

    /// Mark a site dead. Every message to or from it is dropped from `now`
    /// on; there is no recovery within a run (the control plane redeploys
    /// elsewhere instead).
    pub fn fail_site(&mut self, dc: DcIndex) {
        self.dead_mask |= 1u64 << dc.0;
    }

    pub fn is_dead(&self, dc: DcIndex) -> bool {
        self.dead_mask & (1u64 << dc.0) != 0
    }

    /// True if some partition separates `a` and `b` at instant `t`.
    pub fn partitioned_at(&self, a: DcIndex, b: DcIndex, t: SimTime) -> bool {
        self.partitions
            .iter()
            .any(|p| p.active_during(t, t) && p.separates(a, b))
    }

    /// True if some partition separates `a` and `b` at any instant of the
    /// closed window `[t0, t1]`.
    pub fn separated_during(&self, a: DcIndex, b: DcIndex, t0: SimTime, t1: SimTime) -> bool {
        self.partitions
            .iter()
            .any(|p| p.active_during(t0, t1) && p.separates(a, b))
    }

    /// A site is reachable from `src` right now if neither endpoint is dead
    /// and no partition separates them. Placement and routing consult this
    /// (ground-truth partition awareness; see the control-plane module).
    pub fn reachable(&self, src: DcIndex, dst: DcIndex, t: SimTime) -> bool {
        !self.is_dead(src) && !self.is_dead(dst) && !self.partitioned_at(src, dst, t)
    }

    /// Stamp and transmit `env`. When the link is up at send time a delivery
    /// event is queued at `send + latency (+ jitter)`, clamped so deliveries
    /// on one directed link never reorder. The flight-window partition check
    /// happens again at delivery via [`Network::accept_delivery`].
    pub fn send<E: From<Envelope> + Eq, R: Rng>(
        &mut self,
        sched: &mut Scheduler<E>,
        mut env: Envelope,
        rng: &mut R,
    ) -> Result<SendOutcome, NetworkError> {
        let now = sched.now();
        env.send_time = now;
        self.sent += 1;
        if self.is_dead(env.src) || self.is_dead(env.dst) || self.partitioned_at(env.src, env.dst, now)
        {
            self.dropped += 1;
            return Ok(SendOutcome::Dropped);
        }
        let base = self.base_latency(env.src, env.dst);
        let jitter = if self.jitter.1 > self.jitter.0 {
            rng.gen_range(self.jitter.0..=self.jitter.1)
        } else {
            self.jitter.0
        };
        let mut at = now + base + jitter;
        let link = (env.src.0, env.dst.0);
        if let Some(&floor) = self.fifo_floor.get(&link) {
            at = at.max(floor);
        }
        self.fifo_floor.insert(link, at);
        sched.schedule(at, E::from(env))?;
        Ok(SendOutcome::Scheduled(at))
    }

    /// Decide the fate of a delivery event firing at `now`. Returns `false`
    /// (and counts a drop) when a partition touched the flight window or the
    /// destination died meanwhile.
    pub fn accept_delivery(&mut self, env: &Envelope, now: SimTime) -> bool {
        if self.is_dead(env.dst) || self.separated_during(env.src, env.dst, env.send_time, now) {
            self.dropped += 1;
            false
        } else {
            self.delivered += 1;
            true
        }
    }

    /// Scripted partitions, for ground-truth checks in the monitor and in
    /// post-run analysis.
    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }
}

/// Do two partitions separate at least one common (a, b) pair?
fn cross_pairs_intersect(p: &Partition, q: &Partition) -> bool {
    for (i, gi) in p.groups.iter().enumerate() {
        for gj in p.groups.iter().skip(i + 1) {
            for (k, hk) in q.groups.iter().enumerate() {
                for hl in q.groups.iter().skip(k + 1) {
                    if (gi & hk != 0 && gj & hl != 0) || (gi & hl != 0 && gj & hk != 0) {
                        return true;
                    }
                }
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Tier;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn profiles() -> Vec<DatacenterProfile> {
        let mk = |id: &str, peers: &[(&str, u64)]| DatacenterProfile {
            id: id.into(),
            tier: Tier::Edge,
            capacity: 8,
            failure_prob: 0.05,
            region_latency: peers.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        };
        vec![
            mk("a", &[("b", 17), ("c", 25)]),
            mk("b", &[("a", 17), ("c", 10)]),
            mk("c", &[("a", 25), ("b", 10)]),
        ]
    }

    fn net() -> Network {
        Network::new(&profiles(), 0, (0, 0)).unwrap()
    }

    type Ev = Envelope;

    fn env(net: &Network, src: &str, dst: &str) -> Envelope {
        Envelope {
            src: net.lookup(src).unwrap(),
            dst: net.lookup(dst).unwrap(),
            topic: Topic::Control { dc: dst.into() },
            payload: vec![1, 2, 3],
            send_time: 0,
        }
    }

    #[test]
    fn delivery_at_base_latency() {
        let mut n = net();
        let mut s: Scheduler<Ev> = Scheduler::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = env(&n, "a", "b");
        match n.send(&mut s, e, &mut rng).unwrap() {
            SendOutcome::Scheduled(at) => assert_eq!(at, 17),
            SendOutcome::Dropped => panic!("link is up"),
        }
        let (t, got) = s.pop().unwrap();
        assert_eq!(t, 17);
        assert!(n.accept_delivery(&got, t));
        assert_eq!((n.delivered, n.dropped), (1, 0));
    }

    #[test]
    fn send_during_active_partition_drops_immediately() {
        let mut n = net();
        let mut s: Scheduler<Ev> = Scheduler::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (n.lookup("a").unwrap(), n.lookup("b").unwrap());
        n.inject_partition(0, &[vec![a], vec![b]], 10_000, 30_000).unwrap();
        s.schedule(10_000, env(&n, "a", "a")).unwrap();
        s.pop();
        assert!(matches!(
            n.send(&mut s, env(&n, "a", "b"), &mut rng).unwrap(),
            SendOutcome::Dropped
        ));
        assert_eq!(n.dropped, 1);
    }

    #[test]
    fn in_flight_message_crossing_partition_start_is_dropped() {
        // Sent at t=9999 with 17 ms latency; a partition starting at t=10000
        // overlaps the flight window, so the message must die even though the
        // link was up at send time.
        let mut n = net();
        let mut s: Scheduler<Ev> = Scheduler::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (n.lookup("a").unwrap(), n.lookup("b").unwrap());
        n.inject_partition(0, &[vec![a], vec![b]], 10_000, 30_000).unwrap();
        s.schedule(9_999, env(&n, "a", "a")).unwrap();
        s.pop();
        let at = match n.send(&mut s, env(&n, "a", "b"), &mut rng).unwrap() {
            SendOutcome::Scheduled(at) => at,
            SendOutcome::Dropped => panic!("partition not yet active at send"),
        };
        assert_eq!(at, 10_016);
        let (t, got) = s.pop().unwrap();
        assert!(!n.accept_delivery(&got, t));
        assert_eq!(n.dropped, 1);
    }

    #[test]
    fn message_after_heal_goes_through() {
        let mut n = net();
        let mut s: Scheduler<Ev> = Scheduler::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (n.lookup("a").unwrap(), n.lookup("b").unwrap());
        n.inject_partition(0, &[vec![a], vec![b]], 10_000, 30_000).unwrap();
        // Heal is instantaneous at 40_000.
        s.schedule(40_000, env(&n, "a", "a")).unwrap();
        s.pop();
        assert!(matches!(
            n.send(&mut s, env(&n, "a", "b"), &mut rng).unwrap(),
            SendOutcome::Scheduled(40_017)
        ));
        let (t, got) = s.pop().unwrap();
        assert!(n.accept_delivery(&got, t));
    }

    #[test]
    fn overlapping_partition_on_same_pair_rejected() {
        let mut n = net();
        let (a, b, c) = (
            n.lookup("a").unwrap(),
            n.lookup("b").unwrap(),
            n.lookup("c").unwrap(),
        );
        n.inject_partition(0, &[vec![a], vec![b]], 1_000, 5_000).unwrap();
        assert!(matches!(
            n.inject_partition(0, &[vec![a], vec![b, c]], 3_000, 5_000),
            Err(NetworkError::OverlapWithExistingPartition { .. })
        ));
        // Same pair, disjoint window: fine.
        n.inject_partition(0, &[vec![a], vec![b]], 6_000, 1_000).unwrap();
        // Overlapping window, disjoint pair (b vs c): fine.
        n.inject_partition(0, &[vec![b], vec![c]], 1_000, 5_000).unwrap();
    }

    #[test]
    fn past_partition_start_rejected() {
        let mut n = net();
        let (a, b) = (n.lookup("a").unwrap(), n.lookup("b").unwrap());
        assert!(matches!(
            n.inject_partition(500, &[vec![a], vec![b]], 400, 1_000),
            Err(NetworkError::PastTimestamp { .. })
        ));
    }

    #[test]
    fn jitter_never_reorders_a_link() {
        let mut n = Network::new(&profiles(), 0, (0, 50)).unwrap();
        let mut s: Scheduler<Ev> = Scheduler::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut last = 0;
        for i in 0..200u64 {
            // One message per ms on the same link, random jitter.
            s.schedule(i, env(&n, "a", "a")).unwrap();
            while let Some((t, _)) = s.pop() {
                if t >= i {
                    break;
                }
            }
            match n.send(&mut s, env(&n, "a", "b"), &mut rng).unwrap() {
                SendOutcome::Scheduled(at) => {
                    assert!(at >= last, "delivery reordered: {at} < {last}");
                    last = at;
                }
                SendOutcome::Dropped => unreachable!(),
            }
        }
    }

    #[test]
    fn dead_site_drops_everything() {
        let mut n = net();
        let mut s: Scheduler<Ev> = Scheduler::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        n.fail_site(n.lookup("b").unwrap());
        assert!(matches!(
            n.send(&mut s, env(&n, "a", "b"), &mut rng).unwrap(),
            SendOutcome::Dropped
        ));
    }
}
