//! SLA compliance monitoring and the correction loop.
//!
//! Once per period the control site folds its measurements for each class
//! into a [`PeriodSample`]. A dimension must breach for three consecutive
//! periods before a correction fires — a single bad period is noise, three
//! in a row is a trend. While a partition is known to affect the class,
//! staleness and throughput breaches are expected consequences of the
//! environment, so their streaks freeze instead of accumulating: replacing
//! replicas cannot repair a cut link, and thrashing placement during the
//! cut would only slow recovery afterwards. Replica-loss breaches keep
//! counting, because dead sites do not come back.
//!
//! One correction may be outstanding per class. Failed attempts retry with
//! doubling backoff a bounded number of times, after which the monitor
//! declares the target unsatisfiable and goes quiet until the next breach
//! streak.

use std::collections::BTreeMap;

use crate::sim::SimTime;

/// Length of one observation period.
pub const MONITOR_PERIOD_MS: u64 = 1000;
/// Consecutive breach periods required before a correction fires.
pub const BREACH_STREAK: u32 = 3;
/// Attempts per correction before giving up.
pub const MAX_CORRECTION_ATTEMPTS: u32 = 5;
/// Backoff after the first failed attempt; doubles per further failure.
pub const RETRY_BASE_MS: u64 = 1000;

/// SLA dimension a breach is charged against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Dimension {
    Availability,
    Staleness,
    Throughput,
}

/// One period's verdict for one class, as measured by the control site.
#[derive(Clone, Debug)]
pub struct PeriodSample {
    pub class: String,
    /// Enough replicas alive to meet the availability target.
    pub replicas_ok: bool,
    /// Worst observed staleness within the class bound (vacuously true
    /// for classes without one).
    pub staleness_ok: bool,
    /// Committed rate meeting the floor whenever offered load did.
    pub throughput_ok: bool,
    /// Ground truth: a partition currently separates the class's sites.
    pub partition_active: bool,
}

/// Remedial action the cluster should carry out.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Correction {
    /// Replace lost capacity: place one more replica on a fresh site.
    AddReplica { class: String },
    /// Reserve more worker slots for the class's throughput floor.
    GrowReservation { class: String },
    /// Re-run placement from scratch; used when staleness stays out of
    /// bound on a healed network (replicas too far apart).
    Redeploy { class: String },
}

impl Correction {
    pub fn class(&self) -> &str {
        match self {
            Correction::AddReplica { class }
            | Correction::GrowReservation { class }
            | Correction::Redeploy { class } => class,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MonitorAction {
    /// Start this correction now.
    Correct(Correction),
    /// Re-attempt the class's pending correction at the given time.
    Retry { correction: Correction, at: SimTime },
    /// Attempts exhausted; the target is declared unsatisfiable.
    GiveUp { class: String, dimension: Dimension },
}

struct Pending {
    correction: Correction,
    dimension: Dimension,
    attempts: u32,
}

#[derive(Default)]
pub struct SlaMonitor {
    streaks: BTreeMap<(String, Dimension), u32>,
    pending: BTreeMap<String, Pending>,
    unsatisfiable: BTreeMap<String, Dimension>,
}

impl SlaMonitor {
    pub fn new() -> SlaMonitor {
        SlaMonitor::default()
    }

    /// Classes the monitor has given up on, with the failing dimension.
    pub fn unsatisfiable(&self) -> impl Iterator<Item = (&String, &Dimension)> {
        self.unsatisfiable.iter()
    }

    /// Fold in one period's sample; may emit at most one correction.
    pub fn observe(&mut self, sample: &PeriodSample) -> Option<MonitorAction> {
        let checks = [
            (Dimension::Availability, sample.replicas_ok, false),
            (Dimension::Staleness, sample.staleness_ok, sample.partition_active),
            (Dimension::Throughput, sample.throughput_ok, sample.partition_active),
        ];
        let mut fire: Option<Dimension> = None;
        for (dim, ok, suppressed) in checks {
            let key = (sample.class.clone(), dim);
            if ok {
                self.streaks.remove(&key);
                continue;
            }
            if suppressed {
                continue; // streak frozen, neither grows nor resets
            }
            let streak = self.streaks.entry(key).or_insert(0);
            *streak += 1;
            if *streak >= BREACH_STREAK && fire.is_none() {
                fire = Some(dim);
            }
        }
        let dim = fire?;
        if self.pending.contains_key(&sample.class) {
            return None; // a correction is already in flight
        }
        if self.unsatisfiable.get(&sample.class) == Some(&dim) {
            return None; // already declared hopeless for this dimension
        }
        let correction = match dim {
            Dimension::Availability => Correction::AddReplica { class: sample.class.clone() },
            Dimension::Throughput => Correction::GrowReservation { class: sample.class.clone() },
            Dimension::Staleness => Correction::Redeploy { class: sample.class.clone() },
        };
        // Demand a fresh streak before any follow-up correction.
        self.streaks.remove(&(sample.class.clone(), dim));
        self.pending.insert(
            sample.class.clone(),
            Pending { correction: correction.clone(), dimension: dim, attempts: 1 },
        );
        Some(MonitorAction::Correct(correction))
    }

    /// The cluster finished the class's pending correction successfully.
    pub fn correction_done(&mut self, class: &str) {
        self.pending.remove(class);
        self.unsatisfiable.remove(class);
    }

    /// The pending correction failed; schedule a retry or give up.
    pub fn correction_failed(&mut self, class: &str, now: SimTime) -> Option<MonitorAction> {
        let p = self.pending.get_mut(class)?;
        if p.attempts >= MAX_CORRECTION_ATTEMPTS {
            let dim = p.dimension;
            self.pending.remove(class);
            self.unsatisfiable.insert(class.to_string(), dim);
            return Some(MonitorAction::GiveUp { class: class.to_string(), dimension: dim });
        }
        let backoff = RETRY_BASE_MS << (p.attempts - 1);
        p.attempts += 1;
        Some(MonitorAction::Retry { correction: p.correction.clone(), at: now + backoff })
    }
}
