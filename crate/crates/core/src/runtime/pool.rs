//! Worker capacity at one site: reserved lanes plus an elastic pool.
//!
//! A site has a fixed number of worker slots. Classes with a throughput
//! target get a *reserved lane*: a block of slots sized for their rate,
//! always warm, and isolated both ways — other work cannot steal the
//! slots, and the owning class cannot spill beyond them. Everything else
//! shares the *elastic pool*, which grows and shrinks reactively: a
//! scaling pass runs once per second, and a newly provisioned worker
//! needs a cold start before its first task. Each lane queues up to ten
//! times its slot count; beyond that, new work is shed immediately.
//!
//! The pool only tracks slot occupancy for compute. Effect waits (storage
//! commits, remote invokes) release the slot and re-enter later through a
//! fresh completion, so slot demand tracks offered rate times service
//! time, which is exactly how reserved lanes are sized.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::sim::SimTime;

/// Delay before a newly provisioned elastic worker can take its first task.
pub const COLD_START_MS: u64 = 200;
/// Interval between elastic scaling passes.
pub const SCALE_PERIOD_MS: u64 = 1000;
/// Queue bound per lane, as a multiple of the lane's slot count.
pub const QUEUE_FACTOR: usize = 10;

/// Slots needed to sustain `rate_per_s` at `mean_service_ms`, rounded up.
pub fn slots_for_rate(rate_per_s: u64, mean_service_ms: u64) -> u32 {
    let work = rate_per_s as u128 * mean_service_ms as u128;
    work.div_ceil(1000).max(1) as u32
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cannot reserve {requested} slots for '{class}': {available} of {capacity} free")]
pub struct ReserveError {
    pub class: String,
    pub requested: u32,
    pub available: u32,
    pub capacity: u32,
}

/// Which lane a request was admitted to; callers hand it back on finish.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Lane {
    Reserved(String),
    Elastic,
}

/// Outcome of submitting work to the pool.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Admission {
    /// A slot was free; the request starts now.
    Start(Lane),
    /// Queued behind busy slots; surfaces later via finish or warm-up.
    Queued(Lane),
    /// Lane queue full; the request is shed.
    Rejected,
}

struct ReservedLane {
    slots: u32,
    busy: u32,
    queue: VecDeque<u64>,
}

struct Elastic {
    max: u32,
    ready: u32,
    busy: u32,
    warming: Vec<SimTime>,
    queue: VecDeque<u64>,
    /// Highest concurrent demand (busy + queued) seen this scaling window.
    peak_demand: u32,
}

/// All worker capacity at one site.
pub struct SitePool {
    capacity: u32,
    reserved: BTreeMap<String, ReservedLane>,
    elastic: Elastic,
}

impl SitePool {
    pub fn new(capacity: u32) -> SitePool {
        SitePool {
            capacity,
            reserved: BTreeMap::new(),
            elastic: Elastic {
                max: capacity,
                ready: 0,
                busy: 0,
                warming: Vec::new(),
                queue: VecDeque::new(),
                peak_demand: 0,
            },
        }
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    fn reserved_total(&self) -> u32 {
        self.reserved.values().map(|lane| lane.slots).sum()
    }

    /// Carve out (or grow) a pre-warmed lane for `class`.
    pub fn reserve(&mut self, class: &str, slots: u32) -> Result<(), ReserveError> {
        let existing = self.reserved.get(class).map_or(0, |lane| lane.slots);
        let others = self.reserved_total() - existing;
        let available = self.capacity - others;
        if slots > available {
            return Err(ReserveError {
                class: class.to_string(),
                requested: slots,
                available,
                capacity: self.capacity,
            });
        }
        let lane = self.reserved.entry(class.to_string()).or_insert(ReservedLane {
            slots: 0,
            busy: 0,
            queue: VecDeque::new(),
        });
        lane.slots = slots;
        self.elastic.max = self.capacity - others - slots;
        self.elastic.ready = self.elastic.ready.min(self.elastic.max);
        Ok(())
    }

    /// Drop a class's lane, returning its slots to the elastic pool.
    pub fn release_reservation(&mut self, class: &str) {
        self.reserved.remove(class);
        self.elastic.max = self.capacity - self.reserved_total();
    }

    pub fn reserved_slots(&self, class: &str) -> u32 {
        self.reserved.get(class).map_or(0, |lane| lane.slots)
    }

    pub fn elastic_in_use(&self) -> u32 {
        self.elastic.busy
    }

    pub fn queue_depth(&self) -> usize {
        self.elastic.queue.len()
            + self.reserved.values().map(|lane| lane.queue.len()).sum::<usize>()
    }

    /// Offer a request a slot. Reserved classes use only their own lane.
    pub fn submit(&mut self, class: &str, request: u64) -> Admission {
        if let Some(lane) = self.reserved.get_mut(class) {
            if lane.busy < lane.slots {
                lane.busy += 1;
                return Admission::Start(Lane::Reserved(class.to_string()));
            }
            if lane.queue.len() < QUEUE_FACTOR * lane.slots as usize {
                lane.queue.push_back(request);
                return Admission::Queued(Lane::Reserved(class.to_string()));
            }
            return Admission::Rejected;
        }
        let el = &mut self.elastic;
        if el.busy < el.ready {
            el.busy += 1;
            el.peak_demand = el.peak_demand.max(el.busy + el.queue.len() as u32);
            return Admission::Start(Lane::Elastic);
        }
        if el.queue.len() < QUEUE_FACTOR * el.max as usize {
            el.queue.push_back(request);
            el.peak_demand = el.peak_demand.max(el.busy + el.queue.len() as u32);
            return Admission::Queued(Lane::Elastic);
        }
        Admission::Rejected
    }

    /// A slot finished its compute. If work is queued on that lane, the
    /// slot is handed over in place and the next request starts now.
    pub fn finish(&mut self, lane: &Lane) -> Option<u64> {
        match lane {
            Lane::Reserved(class) => {
                let lane = self.reserved.get_mut(class).expect("finish on unknown lane");
                if let Some(next) = lane.queue.pop_front() {
                    Some(next)
                } else {
                    lane.busy -= 1;
                    None
                }
            }
            Lane::Elastic => {
                let el = &mut self.elastic;
                if el.busy <= el.ready.min(el.max) {
                    if let Some(next) = el.queue.pop_front() {
                        return Some(next);
                    }
                }
                el.busy -= 1;
                el.ready = el.ready.min(el.max.max(el.busy));
                None
            }
        }
    }

    /// Run one elastic scaling pass. Returns the time at which any newly
    /// provisioned workers become ready (the caller schedules a wakeup).
    pub fn scale_tick(&mut self, now: SimTime) -> Option<SimTime> {
        let el = &mut self.elastic;
        let target = el.peak_demand.min(el.max);
        el.peak_demand = el.busy + el.queue.len() as u32;
        let provisioned = el.ready + el.warming.len() as u32;
        if target > provisioned {
            let ready_at = now + COLD_START_MS;
            for _ in 0..target - provisioned {
                el.warming.push(ready_at);
            }
            Some(ready_at)
        } else {
            // Release idle workers down to demand; busy ones stay warm.
            el.ready = target.max(el.busy.min(el.ready)).min(el.ready);
            None
        }
    }

    /// Activate workers whose cold start has elapsed and start queued work
    /// on them. Returns the requests that begin now.
    pub fn on_warm(&mut self, now: SimTime) -> Vec<u64> {
        let el = &mut self.elastic;
        let before = el.warming.len();
        el.warming.retain(|&at| at > now);
        el.ready += (before - el.warming.len()) as u32;
        el.ready = el.ready.min(el.max);
        let mut started = Vec::new();
        while el.busy < el.ready {
            let Some(next) = el.queue.pop_front() else { break };
            el.busy += 1;
            started.push(next);
        }
        started
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_sizing_rounds_up() {
        assert_eq!(slots_for_rate(4000, 10), 40);
        assert_eq!(slots_for_rate(101, 10), 2);
        assert_eq!(slots_for_rate(1, 1), 1);
        assert_eq!(slots_for_rate(5000, 10), 50);
    }

    #[test]
    fn reserved_lane_is_exact_and_queues_past_slots() {
        let mut pool = SitePool::new(64);
        pool.reserve("hot", 3).unwrap();
        for i in 0..3 {
            assert_eq!(pool.submit("hot", i), Admission::Start(Lane::Reserved("hot".into())));
        }
        assert_eq!(pool.submit("hot", 3), Admission::Queued(Lane::Reserved("hot".into())));
        // A finishing slot hands itself to the queued request in place.
        assert_eq!(pool.finish(&Lane::Reserved("hot".into())), Some(3));
        assert_eq!(pool.finish(&Lane::Reserved("hot".into())), None);
        assert_eq!(pool.submit("hot", 4), Admission::Start(Lane::Reserved("hot".into())));
    }

    #[test]
    fn reserved_queue_bound_sheds() {
        let mut pool = SitePool::new(8);
        pool.reserve("hot", 2).unwrap();
        for i in 0..2 + 20 {
            assert_ne!(pool.submit("hot", i), Admission::Rejected, "request {i}");
        }
        assert_eq!(pool.submit("hot", 99), Admission::Rejected);
    }

    #[test]
    fn reservation_cannot_exceed_capacity() {
        let mut pool = SitePool::new(10);
        pool.reserve("a", 6).unwrap();
        let err = pool.reserve("b", 5).unwrap_err();
        assert_eq!(err.available, 4);
        // Growing an existing lane re-uses its own slots.
        pool.reserve("a", 8).unwrap();
        assert_eq!(pool.reserved_slots("a"), 8);
    }

    #[test]
    fn elastic_starts_cold_and_warms_after_tick() {
        let mut pool = SitePool::new(4);
        assert_eq!(pool.submit("fn", 1), Admission::Queued(Lane::Elastic));
        let ready_at = pool.scale_tick(1000).expect("should provision");
        assert_eq!(ready_at, 1000 + COLD_START_MS);
        assert!(pool.on_warm(1100).is_empty(), "not warm yet");
        assert_eq!(pool.on_warm(1200), vec![1]);
    }

    #[test]
    fn elastic_sheds_past_queue_bound() {
        let mut pool = SitePool::new(2);
        for i in 0..20 {
            assert_eq!(pool.submit("fn", i), Admission::Queued(Lane::Elastic), "request {i}");
        }
        assert_eq!(pool.submit("fn", 99), Admission::Rejected);
    }

    #[test]
    fn reservation_shrinks_elastic_share() {
        let mut pool = SitePool::new(10);
        pool.reserve("hot", 6).unwrap();
        // Elastic share is now 4, so its queue bound is 40.
        for i in 0..40 {
            assert_eq!(pool.submit("fn", i), Admission::Queued(Lane::Elastic), "request {i}");
        }
        assert_eq!(pool.submit("fn", 99), Admission::Rejected);
        // The reserved lane is untouched by elastic pressure.
        assert_eq!(pool.submit("hot", 100), Admission::Start(Lane::Reserved("hot".into())));
    }

    #[test]
    fn warm_pool_reuses_slots_without_queueing() {
        let mut pool = SitePool::new(4);
        for i in 0..4 {
            pool.submit("fn", i);
        }
        pool.scale_tick(0);
        let started = pool.on_warm(COLD_START_MS);
        assert_eq!(started.len(), 4);
        // Steady state: a finish hands the slot straight to queued work...
        pool.submit("fn", 10);
        assert_eq!(pool.finish(&Lane::Elastic), Some(10));
        // ...and with an empty queue the slot goes idle, ready for reuse.
        assert_eq!(pool.finish(&Lane::Elastic), None);
        assert_eq!(pool.submit("fn", 11), Admission::Start(Lane::Elastic));
    }

    #[test]
    fn scale_down_releases_idle_workers_only() {
        let mut pool = SitePool::new(8);
        for i in 0..8 {
            pool.submit("fn", i);
        }
        pool.scale_tick(0);
        pool.on_warm(COLD_START_MS);
        assert_eq!(pool.elastic_in_use(), 8);
        // Six finish; two still busy. Peak resets, next tick shrinks.
        for _ in 0..6 {
            pool.finish(&Lane::Elastic);
        }
        pool.scale_tick(1000);
        pool.scale_tick(2000);
        assert_eq!(pool.elastic_in_use(), 2);
        // Busy workers are never reclaimed mid-task.
        assert!(pool.submit("fn", 50) != Admission::Rejected);
    }
}
