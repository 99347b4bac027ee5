//! The cluster engine: one deployed system under simulation.
//!
//! A [`Cluster`] owns the virtual clock, the network, one worker pool per
//! datacenter, and every deployed class replica (consensus group members,
//! CRDT stores, sync state, anti-entropy endpoints). Driving it with
//! [`Cluster::run_until`] executes the whole system — client workloads,
//! request routing, handler steps, replication, failure detection, and SLA
//! corrections — as a single deterministic event loop.
//!
//! Execution model:
//!
//! - Client operations enter at a gateway datacenter and are routed to a
//!   replica: the session's pinned replica, the consensus leader for
//!   strongly consistent functions, or the nearest reachable replica
//!   (preferring the function's locality list) otherwise.
//! - An invocation is charged one worker slot for its declared service
//!   time; its effects (commits, refreshes, nested calls) run when the
//!   compute finishes. Strong effects park the invocation until the
//!   consensus round resolves; weak effects apply immediately.
//! - Triggers fire at the executing site as local invocations with an
//!   empty argument, capped at [`TRIGGER_DEPTH_MAX`] chained levels.
//! - A once-per-second control loop feeds failure estimators, samples
//!   per-class health, and applies corrections when an objective stays
//!   breached for several consecutive periods.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::antientropy::{
    AeAction, AeEndpoint, AeMsg, CrdtValue, GateDecision, ReplicaStore, ReplicaSyncState,
    StoreKey, WriteOp,
};
use crate::control::{
    place_class, plan_placement, split_throughput, Correction, FailureEstimator, MonitorAction,
    PeriodSample, PlanError, SlaMonitor, MONITOR_PERIOD_MS,
};
use crate::model::{
    validate_class, validate_profiles, ClassDefinition, ClassError, Consistency,
    DatacenterProfile, FlattenedClass, ProfileError, SlaSpec, Tier, TriggerEvent,
};
use crate::raft::{NotLeader, RaftAction, RaftMsg, RaftNode};
use crate::runtime::{
    args, slots_for_rate, Admission, Handler, HandlerCtx, HandlerRegistry, HandlerStep, Lane,
    SitePool, SCALE_PERIOD_MS,
};
use crate::session::{SessionError, SessionManager};
use crate::sim::wire::{RecordReader, RecordWriter, WireError};
use crate::sim::{DcIndex, Envelope, Network, NetworkError, Scheduler, SimTime, Topic};

use super::metrics::{counter_value, parse_counter, ClassSecond, Metrics, OpKind, OpRecord, OpResult};
use super::msg::{ObjMsg, OpError, Outcome};
use super::workload::{ArgSpec, WorkloadKind, WorkloadSpec};

/// Budget for one client operation, including redirects and retries.
pub const CLIENT_OP_TIMEOUT_MS: u64 = 1500;
/// Budget for one nested (object-to-object) invocation.
pub const CHILD_TIMEOUT_MS: u64 = 1000;
/// A gateway follows at most this many leader redirects per operation.
pub const REDIRECT_HOPS_MAX: u32 = 10;
/// Maximum trigger / nested-call chain depth.
pub const TRIGGER_DEPTH_MAX: u32 = 16;
/// Sync cadence bound for classes without an explicit staleness bound:
/// read-your-write replicas exchange state at least this often.
pub const DEFAULT_SYNC_DELTA_MS: u64 = 1000;
/// An anti-entropy session with no message activity for this long is
/// abandoned (its peer is partitioned, dead, or the round was lost).
pub const AE_IDLE_ABORT_MS: u64 = 300;
/// Retry delay after an abandoned anti-entropy round. Kept short so a
/// heal is noticed quickly; a failed round costs only one dropped probe.
pub const AE_RETRY_MS: u64 = 200;

/// Everything that can happen in the simulation, in one queue.
#[derive(Debug, PartialEq, Eq)]
pub enum Ev {
    /// A message delivery attempt.
    Net(Envelope),
    /// Consensus timer (election timeout / heartbeat) for one replica.
    RaftWake { class: String, dc: DcIndex },
    /// Start an anti-entropy round from `dc` towards `peer`.
    AeRound { class: String, dc: DcIndex, peer: DcIndex },
    /// Check an anti-entropy session for idleness; abort if stuck.
    AeIdleCheck { class: String, dc: DcIndex, session: u64 },
    /// Periodic elastic-pool scaling pass at one site.
    PoolScale { dc: DcIndex },
    /// Cold-started workers become ready at one site.
    PoolWarm { dc: DcIndex },
    /// An invocation's compute charge elapsed.
    ServiceDone { dc: DcIndex, req: u64 },
    /// A nested invocation issued from `dc` did not answer in time.
    ChildTimeout { dc: DcIndex, child: u64 },
    /// A client operation did not answer in time.
    ClientTimeout { req: u64 },
    /// A closed-loop client is ready for its next operation.
    ClientWake { client: usize },
    /// Per-ms arrival tick of an open-loop workload.
    RateTick { workload: usize },
    /// Once-per-second control loop.
    MonitorTick,
    /// Re-attempt a previously failed SLA correction.
    CorrectionRetry { class: String },
    /// Scripted permanent site failure.
    KillSite { dc: DcIndex },
}

impl From<Envelope> for Ev {
    fn from(env: Envelope) -> Ev {
        Ev::Net(env)
    }
}

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Net(#[from] NetworkError),
    #[error(transparent)]
    Class(#[from] ClassError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("class {0} is already deployed")]
    AlreadyDeployed(String),
    #[error("class {0} is not deployed")]
    UnknownClass(String),
    #[error("cannot reserve {need} slots for class {class} at {dc}")]
    ReservationFailed { class: String, dc: String, need: u32 },
}

/// How one deployed class is laid out across sites.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Placement {
    pub class: String,
    /// Class-level consistency mode label.
    pub mode: String,
    /// Replica site names, in placement order.
    pub replicas: Vec<String>,
    /// Replica count the availability target requires.
    pub target_replicas: usize,
    /// Throughput floor reserved across replicas; 0 = none.
    pub reserved_rps: u64,
    /// Tightest staleness bound over bounded attrs, if any.
    pub bounded_delta_ms: Option<u64>,
    /// Whether the class runs a consensus group (any strong attribute).
    pub consensus: bool,
}

/// Per-replica state of one class at one site.
struct ClassSite {
    /// Consensus group member; present only for classes with strong attrs.
    raft: Option<RaftNode>,
    /// Timestamps with a pending `RaftWake` already queued.
    armed: Vec<SimTime>,
    /// CRDT store backing bounded-staleness and read-your-write attrs.
    store: ReplicaStore,
    /// Store backing strong attrs; mutated only by committed log entries,
    /// in index order, so replicas converge.
    strong_store: ReplicaStore,
    sync: ReplicaSyncState,
    ae: AeEndpoint,
    /// Anti-entropy session → (last activity, peer if we initiated).
    ae_last: BTreeMap<u64, (SimTime, Option<u16>)>,
    /// Consensus log index → invocation waiting on that commit.
    pending_commit: BTreeMap<u64, u64>,
    /// Barrier-read id → (invocation, key to read once served).
    pending_read: BTreeMap<u64, (u64, StoreKey)>,
}

/// One in-progress invocation at its executing site.
struct Invocation {
    class: String,
    function: String,
    instance: u64,
    arg: Vec<u8>,
    /// Gateway to answer; `None` for trigger-spawned invocations.
    reply_to: Option<DcIndex>,
    session: u64,
    depth: u32,
    handler: Arc<dyn Handler>,
    step: u32,
    /// Result of the last effect, consumed by the next handler step.
    reply: Vec<u8>,
    scratch: Vec<u8>,
    service_ms: u64,
    /// Worker slot held while the compute charge runs.
    lane: Option<Lane>,
    arrival_ms: SimTime,
    start_ms: SimTime,
}

/// One datacenter: its worker pool and its class replicas.
struct Site {
    pool: SitePool,
    classes: BTreeMap<String, ClassSite>,
    running: BTreeMap<u64, Invocation>,
    queued: BTreeMap<u64, Invocation>,
    /// Nested-call request → parent invocation waiting for it.
    children: BTreeMap<u64, u64>,
}

/// Deployment record of one class.
struct DeployedClass {
    flat: FlattenedClass,
    replicas: Vec<DcIndex>,
    /// Replica count the availability target requires; deaths below this
    /// trip the availability objective.
    target_replicas: usize,
    /// Throughput floor (requests/s) reserved across replicas; 0 = none.
    reserved_rps: u64,
    /// Tightest staleness bound over bounded attrs, if any.
    bounded_delta_ms: Option<u64>,
    /// Anti-entropy cadence driver (bounded delta or the default).
    sync_delta_ms: u64,
    /// Last known consensus leader, learned from elections and redirects.
    leader_hint: Option<u16>,
    strong: bool,
    weak: bool,
}

/// Gateway-side state of one in-flight client operation.
struct PendingOp {
    client: Option<usize>,
    hops: u32,
    /// Replica the request was last sent to (redirects rotate from here).
    last: DcIndex,
    class: String,
    function: String,
    instance: u64,
    arg: Vec<u8>,
    session: u64,
    gateway: DcIndex,
    issued_ms: SimTime,
    kind: OpKind,
    value: u64,
}

/// One closed-loop client.
struct Client {
    workload: usize,
    gateway: DcIndex,
    /// Session token once opened (sessions workloads only).
    session: u64,
    /// Private object instance (sessions workloads only).
    instance: u64,
    /// Reads remaining before the next write in the session loop.
    reads_left: u32,
}

/// Arrival accumulator of one open-loop workload.
struct RateState {
    gateway: DcIndex,
    carry: u64,
    next_instance: u64,
}

enum EffectOutcome {
    /// Effect finished; resume the handler with these bytes.
    Ready(Vec<u8>),
    /// Effect is asynchronous; the invocation waits off-slot.
    Parked,
    /// Effect failed; the invocation fails with this error.
    Abort(OpError),
}

/// A deployed distributed object system under deterministic simulation.
pub struct Cluster {
    pub sched: Scheduler<Ev>,
    pub net: Network,
    pub metrics: Metrics,
    rng: ChaCha8Rng,
    profiles: Vec<DatacenterProfile>,
    registry: HandlerRegistry,
    library: BTreeMap<String, ClassDefinition>,
    classes: BTreeMap<String, DeployedClass>,
    sites: Vec<Site>,
    sessions: BTreeMap<String, SessionManager>,
    pending: BTreeMap<u64, PendingOp>,
    clients: Vec<Client>,
    workloads: Vec<WorkloadSpec>,
    rates: Vec<RateState>,
    /// Monotone write counters per (class, instance, attribute).
    counters: BTreeMap<(String, u64, String), u64>,
    estimators: Vec<FailureEstimator>,
    monitor: SlaMonitor,
    pending_corrections: BTreeMap<String, Correction>,
    /// Placement rotation cursor; spreads equally good choices.
    rotation: usize,
    next_req: u64,
    /// Invocations ready to resume after the current event, drained at the
    /// top of the loop so instant commits cannot recurse.
    resume_q: VecDeque<(DcIndex, u64, Vec<u8>)>,
    control_dc: DcIndex,
    /// Per-class ops issued / committed within the current monitor period.
    sec_issued: BTreeMap<String, u64>,
    sec_committed: BTreeMap<String, u64>,
    /// Applied corrections, for post-run analysis.
    pub corrections_applied: Vec<(SimTime, Correction)>,
}

impl Cluster {
    pub fn new(
        profiles: Vec<DatacenterProfile>,
        seed: u64,
        intra_latency_ms: u64,
        jitter: (u64, u64),
    ) -> Result<Cluster, ClusterError> {
        validate_profiles(&profiles)?;
        let net = Network::new(&profiles, intra_latency_ms, jitter)?;
        let mut sched = Scheduler::new();
        let sites = profiles
            .iter()
            .map(|p| Site {
                pool: SitePool::new(p.capacity),
                classes: BTreeMap::new(),
                running: BTreeMap::new(),
                queued: BTreeMap::new(),
                children: BTreeMap::new(),
            })
            .collect();
        let estimators = profiles
            .iter()
            .map(|p| FailureEstimator::new(p.failure_prob))
            .collect();
        let control_dc = profiles
            .iter()
            .position(|p| p.tier == Tier::Cloud)
            .map(|i| DcIndex(i as u16))
            .unwrap_or(DcIndex(0));
        for i in 0..profiles.len() {
            sched
                .schedule(SCALE_PERIOD_MS, Ev::PoolScale { dc: DcIndex(i as u16) })
                .expect("future");
        }
        sched.schedule(MONITOR_PERIOD_MS, Ev::MonitorTick).expect("future");
        Ok(Cluster {
            sched,
            net,
            metrics: Metrics::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            profiles,
            registry: HandlerRegistry::standard(),
            library: BTreeMap::new(),
            classes: BTreeMap::new(),
            sites,
            sessions: BTreeMap::new(),
            pending: BTreeMap::new(),
            clients: Vec::new(),
            workloads: Vec::new(),
            rates: Vec::new(),
            counters: BTreeMap::new(),
            estimators,
            monitor: SlaMonitor::new(),
            pending_corrections: BTreeMap::new(),
            rotation: 0,
            next_req: 0,
            resume_q: VecDeque::new(),
            control_dc,
            sec_issued: BTreeMap::new(),
            sec_committed: BTreeMap::new(),
            corrections_applied: Vec::new(),
        })
    }

    /// Register a class definition without deploying it (parents must be
    /// known before their children validate).
    pub fn add_definition(&mut self, def: ClassDefinition) {
        self.library.insert(def.name.clone(), def);
    }

    pub fn class_replicas(&self, class: &str) -> Option<&[DcIndex]> {
        self.classes.get(class).map(|d| d.replicas.as_slice())
    }

    /// Read-only placement summary of every deployed class, in name order.
    pub fn placements(&self) -> Vec<Placement> {
        self.classes
            .iter()
            .map(|(name, d)| Placement {
                class: name.clone(),
                mode: d.flat.class_sla.consistency.mode_name().to_string(),
                replicas: d
                    .replicas
                    .iter()
                    .map(|r| self.net.name(*r).to_string())
                    .collect(),
                target_replicas: d.target_replicas,
                reserved_rps: d.reserved_rps,
                bounded_delta_ms: d.bounded_delta_ms,
                consensus: d.strong,
            })
            .collect()
    }

    pub fn monitor(&self) -> &SlaMonitor {
        &self.monitor
    }

    /// Validate, place, and activate a class: pick a replica count from the
    /// availability target, place replicas (locality first, then estimated
    /// reliability), reserve worker slots for any throughput floor, and
    /// wire up consensus timers and anti-entropy rounds.
    pub fn deploy(&mut self, def: &ClassDefinition) -> Result<(), ClusterError> {
        if self.classes.contains_key(&def.name) {
            return Err(ClusterError::AlreadyDeployed(def.name.clone()));
        }
        self.library.insert(def.name.clone(), def.clone());
        let flat = validate_class(def, &self.library, &self.registry.names())?;
        let strong = flat.has_strong_attr();
        let weak = flat.has_crdt_attr();

        // Strictest targets across the class and every member.
        let mut avail_target = flat.class_sla.availability;
        let mut reserved_rps = flat.class_sla.throughput.unwrap_or(0);
        let mut bounded_delta: Option<u64> = None;
        let mut locality: Vec<String> = Vec::new();
        let fold = |sla: &SlaSpec,
                        avail: &mut f64,
                        rps: &mut u64,
                        delta: &mut Option<u64>,
                        loc: &mut Vec<String>| {
            *avail = avail.max(sla.availability);
            *rps = (*rps).max(sla.throughput.unwrap_or(0));
            if let Consistency::BoundedStaleness { delta_ms } = sla.consistency {
                *delta = Some(delta.map_or(delta_ms, |d: u64| d.min(delta_ms)));
            }
            if let Some(list) = &sla.locality {
                for d in list {
                    if !loc.contains(d) {
                        loc.push(d.clone());
                    }
                }
            }
        };
        {
            let (a, r, d, l) =
                (&mut avail_target, &mut reserved_rps, &mut bounded_delta, &mut locality);
            let class_sla = flat.class_sla.clone();
            fold(&class_sla, a, r, d, l);
            for attr in &flat.attributes {
                fold(&attr.sla, a, r, d, l);
            }
            for f in &flat.functions {
                fold(&f.sla, a, r, d, l);
            }
        }
        let sync_delta_ms = bounded_delta.unwrap_or(DEFAULT_SYNC_DELTA_MS);

        // Replica count and placement over currently usable sites, judged
        // jointly: locality can force less-reliable sites into the set, so
        // the count must come from the sites actually chosen.
        let est: Vec<f64> = self.estimators.iter().map(|e| e.prob()).collect();
        let rotation = self.rotation;
        self.rotation += 1;
        let loc_opt = (!locality.is_empty()).then_some(locality.as_slice());
        let net = &self.net;
        let replicas = plan_placement(
            avail_target,
            loc_opt,
            &self.profiles,
            &est,
            &|dc| !net.is_dead(dc),
            rotation,
        )?;
        let k = replicas.len();

        // Per-replica state.
        let now = self.sched.now();
        let member_ids: Vec<u16> = replicas.iter().map(|d| d.0).collect();
        for &dc in &replicas {
            let mut cs = ClassSite {
                raft: strong
                    .then(|| RaftNode::new(dc.0, member_ids.clone(), now, &mut self.rng)),
                armed: Vec::new(),
                store: ReplicaStore::new(dc.0),
                strong_store: ReplicaStore::new(dc.0),
                sync: ReplicaSyncState::new(dc.0, sync_delta_ms),
                ae: AeEndpoint::new(dc.0),
                ae_last: BTreeMap::new(),
                pending_commit: BTreeMap::new(),
                pending_read: BTreeMap::new(),
            };
            for &p in &replicas {
                if p != dc {
                    cs.sync.note_peer(p.0, now);
                }
            }
            self.sites[dc.0 as usize].classes.insert(def.name.clone(), cs);
        }

        // Worker reservations for the throughput floor, split by capacity.
        if reserved_rps > 0 {
            let caps: Vec<u32> = replicas
                .iter()
                .map(|d| self.profiles[d.0 as usize].capacity)
                .collect();
            let shares = split_throughput(reserved_rps, &caps);
            let mean = flat
                .functions
                .iter()
                .map(|f| f.mean_service_ms)
                .fold(1.0_f64, f64::max);
            let mean_ms = (mean.ceil() as u64).max(1);
            for (&dc, &share) in replicas.iter().zip(&shares) {
                if share == 0 {
                    continue;
                }
                let slots = slots_for_rate(share, mean_ms);
                self.sites[dc.0 as usize]
                    .pool
                    .reserve(&def.name, slots)
                    .map_err(|_| ClusterError::ReservationFailed {
                        class: def.name.clone(),
                        dc: self.net.name(dc).to_string(),
                        need: slots,
                    })?;
            }
        }

        if strong {
            for &dc in &replicas {
                self.arm_raft(&def.name, dc);
            }
        }
        if weak {
            let mut stagger = 0;
            for i in 0..replicas.len() {
                for j in i + 1..replicas.len() {
                    let (a, b) = (replicas[i].min(replicas[j]), replicas[i].max(replicas[j]));
                    self.sched
                        .schedule(
                            now + 50 + stagger,
                            Ev::AeRound { class: def.name.clone(), dc: a, peer: b },
                        )
                        .expect("future");
                    stagger += 7;
                }
            }
        }
        self.sessions.insert(def.name.clone(), SessionManager::new());
        self.classes.insert(
            def.name.clone(),
            DeployedClass {
                flat,
                replicas,
                target_replicas: k,
                reserved_rps,
                bounded_delta_ms: bounded_delta,
                sync_delta_ms,
                leader_hint: None,
                strong,
                weak,
            },
        );
        Ok(())
    }

    /// Script a partition window (must lie in the future). Each group is a
    /// list of site names; cross-group traffic drops while the window is
    /// open.
    pub fn script_partition(
        &mut self,
        start: SimTime,
        groups: &[&[&str]],
        duration_ms: u64,
    ) -> Result<(), ClusterError> {
        let mut resolved = Vec::with_capacity(groups.len());
        for group in groups {
            let mut ids = Vec::with_capacity(group.len());
            for name in *group {
                ids.push(self.net.lookup(name)?);
            }
            resolved.push(ids);
        }
        let now = self.sched.now();
        self.net.inject_partition(now, &resolved, start, duration_ms)?;
        Ok(())
    }

    /// Script a permanent site failure at `at`.
    pub fn script_site_failure(&mut self, at: SimTime, site: &str) -> Result<(), ClusterError> {
        let dc = self.net.lookup(site)?;
        let at = at.max(self.sched.now());
        self.sched.schedule(at, Ev::KillSite { dc }).expect("future");
        Ok(())
    }

    /// Register a workload; its class must already be deployed.
    pub fn add_workload(&mut self, spec: WorkloadSpec) -> Result<(), ClusterError> {
        let gateway = self.net.lookup(&spec.gateway)?;
        if !self.classes.contains_key(&spec.class) {
            return Err(ClusterError::UnknownClass(spec.class.clone()));
        }
        let w = self.workloads.len();
        let start = spec.start_ms.max(self.sched.now());
        self.rates.push(RateState { gateway, carry: 0, next_instance: 0 });
        match &spec.kind {
            WorkloadKind::Sessions { clients, .. } | WorkloadKind::ClosedLoop { clients, .. } => {
                for _ in 0..*clients {
                    let id = self.clients.len();
                    self.clients.push(Client {
                        workload: w,
                        gateway,
                        session: 0,
                        instance: 1_000_000 + id as u64,
                        reads_left: 0,
                    });
                    self.sched.schedule(start, Ev::ClientWake { client: id }).expect("future");
                }
            }
            WorkloadKind::FixedRate { .. } => {
                self.sched.schedule(start, Ev::RateTick { workload: w }).expect("future");
            }
        }
        self.workloads.push(spec);
        Ok(())
    }

    /// Run the event loop until the queue drains or virtual time would pass
    /// `horizon_ms`.
    pub fn run_until(&mut self, horizon_ms: SimTime) {
        while let Some(t) = self.sched.peek_time() {
            if t > horizon_ms {
                break;
            }
            let (now, ev) = self.sched.pop().expect("peeked");
            self.handle(now, ev);
            while let Some((dc, req, reply)) = self.resume_q.pop_front() {
                if let Some(inv) = self.sites[dc.0 as usize].running.get_mut(&req) {
                    inv.reply = reply;
                }
                self.run_steps(dc, req);
            }
        }
    }

    fn alloc_req(&mut self) -> u64 {
        self.next_req += 1;
        self.next_req
    }

    fn next_counter(&mut self, class: &str, instance: u64, attr: &str) -> u64 {
        let e = self
            .counters
            .entry((class.to_string(), instance, attr.to_string()))
            .or_insert(0);
        *e += 1;
        *e
    }

    fn send_env(&mut self, env: Envelope) {
        let _ = self.net.send(&mut self.sched, env, &mut self.rng);
    }

    fn handle(&mut self, now: SimTime, ev: Ev) {
        match ev {
            Ev::Net(env) => {
                if !self.net.accept_delivery(&env, now) {
                    return;
                }
                match env.topic.clone() {
                    Topic::Raft { class, .. } => self.on_raft_msg(now, &class, env),
                    Topic::AntiEntropy { class, .. } => self.on_ae_msg(now, &class, env),
                    Topic::Object { .. } => self.on_obj_msg(now, env),
                    Topic::Control { .. } => {}
                }
            }
            Ev::RaftWake { class, dc } => {
                if self.net.is_dead(dc) {
                    return;
                }
                let acts = {
                    let Some(cs) = self.sites[dc.0 as usize].classes.get_mut(&class) else {
                        return;
                    };
                    cs.armed.retain(|&t| t != now);
                    let Some(raft) = cs.raft.as_mut() else { return };
                    raft.on_wakeup(now, &mut self.rng)
                };
                self.apply_raft_actions(now, &class, dc, acts);
                self.arm_raft(&class, dc);
            }
            Ev::AeRound { class, dc, peer } => self.on_ae_round(now, &class, dc, peer),
            Ev::AeIdleCheck { class, dc, session } => {
                self.on_ae_idle_check(now, &class, dc, session)
            }
            Ev::PoolScale { dc } => {
                if self.net.is_dead(dc) {
                    return;
                }
                if let Some(ready_at) = self.sites[dc.0 as usize].pool.scale_tick(now) {
                    self.sched.schedule(ready_at, Ev::PoolWarm { dc }).expect("future");
                }
                self.sched
                    .schedule(now + SCALE_PERIOD_MS, Ev::PoolScale { dc })
                    .expect("future");
            }
            Ev::PoolWarm { dc } => {
                if self.net.is_dead(dc) {
                    return;
                }
                let started = self.sites[dc.0 as usize].pool.on_warm(now);
                for req in started {
                    self.start_queued(now, dc, req, Lane::Elastic);
                }
            }
            Ev::ServiceDone { dc, req } => {
                if self.net.is_dead(dc) {
                    return;
                }
                let lane = self.sites[dc.0 as usize]
                    .running
                    .get_mut(&req)
                    .and_then(|inv| inv.lane.take());
                if let Some(lane) = lane {
                    if let Some(next) = self.sites[dc.0 as usize].pool.finish(&lane) {
                        self.start_queued(now, dc, next, lane);
                    }
                }
                self.run_steps(dc, req);
            }
            Ev::ChildTimeout { dc, child } => {
                if self.net.is_dead(dc) {
                    return;
                }
                if let Some(parent) = self.sites[dc.0 as usize].children.remove(&child) {
                    self.finish_invocation(dc, parent, Outcome::Err(OpError::InvokeTimeout));
                }
            }
            Ev::ClientTimeout { req } => {
                if let Some(pc) = self.pending.remove(&req) {
                    self.finalize_op(now, req, pc, OpResult::Timeout, 0, 0);
                }
            }
            Ev::ClientWake { client } => self.on_client_wake(now, client),
            Ev::RateTick { workload } => self.on_rate_tick(now, workload),
            Ev::MonitorTick => self.on_monitor_tick(now),
            Ev::CorrectionRetry { class } => {
                if let Some(c) = self.pending_corrections.remove(&class) {
                    self.try_correction(now, c);
                }
            }
            Ev::KillSite { dc } => self.on_kill_site(dc),
        }
    }

    // ---- consensus plumbing ----------------------------------------------

    fn on_raft_msg(&mut self, now: SimTime, class: &str, env: Envelope) {
        let dc = env.dst;
        let Ok(msg) = RaftMsg::decode(&env.payload) else { return };
        let acts = {
            let Some(cs) = self.sites[dc.0 as usize].classes.get_mut(class) else {
                return;
            };
            let Some(raft) = cs.raft.as_mut() else { return };
            raft.on_message(now, env.src.0, msg, &mut self.rng)
        };
        self.apply_raft_actions(now, class, dc, acts);
        self.arm_raft(class, dc);
    }

    /// Queue a `RaftWake` for the node's next timer, once per timestamp.
    fn arm_raft(&mut self, class: &str, dc: DcIndex) {
        let now = self.sched.now();
        let Some(cs) = self.sites[dc.0 as usize].classes.get_mut(class) else {
            return;
        };
        let Some(raft) = cs.raft.as_ref() else { return };
        let at = raft.next_wakeup().max(now);
        if !cs.armed.contains(&at) {
            cs.armed.push(at);
            self.sched
                .schedule(at, Ev::RaftWake { class: class.to_string(), dc })
                .expect("future");
        }
    }

    fn apply_raft_actions(
        &mut self,
        now: SimTime,
        class: &str,
        dc: DcIndex,
        acts: Vec<RaftAction>,
    ) {
        for act in acts {
            match act {
                RaftAction::Send { to, msg } => {
                    let env = Envelope {
                        src: dc,
                        dst: DcIndex(to),
                        topic: Topic::Raft { class: class.to_string(), shard: 0 },
                        payload: msg.encode(),
                        send_time: now,
                    };
                    self.send_env(env);
                }
                RaftAction::Elected { .. } => {
                    if let Some(d) = self.classes.get_mut(class) {
                        d.leader_hint = Some(dc.0);
                    }
                }
                RaftAction::SteppedDown => {
                    let (commits, reads, hint) = {
                        let Some(cs) = self.sites[dc.0 as usize].classes.get_mut(class) else {
                            continue;
                        };
                        (
                            std::mem::take(&mut cs.pending_commit),
                            std::mem::take(&mut cs.pending_read),
                            cs.raft.as_ref().and_then(|r| r.leader_hint()),
                        )
                    };
                    for (_, req) in commits {
                        self.finish_invocation(dc, req, Outcome::Err(OpError::NotLeader { hint }));
                    }
                    for (_, (req, _)) in reads {
                        self.finish_invocation(dc, req, Outcome::Err(OpError::NotLeader { hint }));
                    }
                }
                RaftAction::Committed { index, payload, .. } => {
                    if payload.is_empty() {
                        continue; // term anchor
                    }
                    let Ok((key, op)) = decode_strong_op(&payload) else { continue };
                    let resumed = {
                        let Some(cs) = self.sites[dc.0 as usize].classes.get_mut(class) else {
                            continue;
                        };
                        let created = cs.strong_store.get(&key).is_none();
                        let _ = cs.strong_store.apply_local_write(now, key, op);
                        cs.pending_commit.remove(&index).map(|req| (req, created))
                    };
                    // Triggers fire where the invocation executes, exactly
                    // once per commit.
                    if let Some((req, created)) = resumed {
                        let depth = self.sites[dc.0 as usize]
                            .running
                            .get(&req)
                            .map_or(0, |inv| inv.depth);
                        self.fire_attr_triggers(now, dc, class, key, created, depth + 1);
                        self.resume_q.push_back((dc, req, Vec::new()));
                    }
                }
                RaftAction::ReadReady { read_id, .. } => {
                    let hit = {
                        let Some(cs) = self.sites[dc.0 as usize].classes.get_mut(class) else {
                            continue;
                        };
                        cs.pending_read.remove(&read_id).map(|(req, key)| {
                            (req, read_value_bytes(cs.strong_store.get(&key)))
                        })
                    };
                    if let Some((req, bytes)) = hit {
                        self.resume_q.push_back((dc, req, bytes));
                    }
                }
            }
        }
    }

    // ---- invocation execution --------------------------------------------

    fn on_obj_msg(&mut self, now: SimTime, env: Envelope) {
        let Ok(msg) = ObjMsg::decode(&env.payload) else { return };
        match msg {
            ObjMsg::Request { req, class, function, instance, arg, session, depth } => {
                self.on_obj_request(now, env.src, env.dst, req, class, function, instance, arg, session, depth);
            }
            ObjMsg::Reply { req, outcome, arrival_ms, start_ms } => {
                let dst = env.dst;
                // Nested-call reply to a waiting parent invocation?
                if let Some(parent) = self.sites[dst.0 as usize].children.remove(&req) {
                    match outcome {
                        Outcome::Ok(bytes) => self.resume_q.push_back((dst, parent, bytes)),
                        Outcome::Err(e) => {
                            self.finish_invocation(dst, parent, Outcome::Err(e));
                        }
                    }
                    return;
                }
                // Else: a client operation answering at its gateway.
                let Some(pc) = self.pending.remove(&req) else { return };
                self.on_gateway_reply(now, req, pc, outcome, arrival_ms, start_ms);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_obj_request(
        &mut self,
        now: SimTime,
        origin: DcIndex,
        dc: DcIndex,
        req: u64,
        class: String,
        function: String,
        instance: u64,
        arg: Vec<u8>,
        session: u64,
        depth: u32,
    ) {
        let reply_err = |this: &mut Cluster, e: OpError| {
            let msg = ObjMsg::Reply {
                req,
                outcome: Outcome::Err(e),
                arrival_ms: now,
                start_ms: 0,
            };
            let env = Envelope {
                src: dc,
                dst: origin,
                topic: Topic::Object { class: class.clone(), instance },
                payload: msg.encode(),
                send_time: now,
            };
            this.send_env(env);
        };
        let looked_up = match self.classes.get(&class) {
            None => Err(OpError::WrongSite),
            Some(dcls) => match dcls.flat.function(&function) {
                None => Err(OpError::HandlerFailed(format!("unknown function {function}"))),
                Some(f) => Ok(((f.mean_service_ms.ceil() as u64).max(1), f.handler.clone())),
            },
        };
        let (service_ms, handler_name) = match looked_up {
            Ok(v) => v,
            Err(e) => return reply_err(self, e),
        };
        if !self.sites[dc.0 as usize].classes.contains_key(&class) {
            return reply_err(self, OpError::WrongSite);
        }
        let Some(handler) = self.registry.get(&handler_name) else {
            return reply_err(self, OpError::HandlerFailed(format!("unknown handler {handler_name}")));
        };
        let inv = Invocation {
            class,
            function,
            instance,
            arg,
            reply_to: Some(origin),
            session,
            depth,
            handler,
            step: 0,
            reply: Vec::new(),
            scratch: Vec::new(),
            service_ms,
            lane: None,
            arrival_ms: now,
            start_ms: 0,
        };
        self.admit(now, dc, req, inv);
    }

    /// Ask the site pool for a worker slot and start, queue, or shed.
    fn admit(&mut self, now: SimTime, dc: DcIndex, req: u64, mut inv: Invocation) {
        let site = &mut self.sites[dc.0 as usize];
        match site.pool.submit(&inv.class, req) {
            Admission::Start(lane) => {
                inv.start_ms = now;
                inv.lane = Some(lane);
                let at = now + inv.service_ms;
                site.running.insert(req, inv);
                self.sched.schedule(at, Ev::ServiceDone { dc, req }).expect("future");
            }
            Admission::Queued(_) => {
                site.queued.insert(req, inv);
            }
            Admission::Rejected => {
                if let Some(origin) = inv.reply_to {
                    let msg = ObjMsg::Reply {
                        req,
                        outcome: Outcome::Err(OpError::NoCapacity),
                        arrival_ms: now,
                        start_ms: 0,
                    };
                    let env = Envelope {
                        src: dc,
                        dst: origin,
                        topic: Topic::Object { class: inv.class.clone(), instance: inv.instance },
                        payload: msg.encode(),
                        send_time: now,
                    };
                    self.send_env(env);
                }
                // Trigger-spawned work is shed silently.
            }
        }
    }

    /// A queued request inherits the freed worker slot and starts now.
    fn start_queued(&mut self, now: SimTime, dc: DcIndex, req: u64, lane: Lane) {
        let Some(mut inv) = self.sites[dc.0 as usize].queued.remove(&req) else {
            return;
        };
        inv.start_ms = now;
        let at = now + inv.service_ms;
        inv.lane = Some(lane);
        self.sites[dc.0 as usize].running.insert(req, inv);
        self.sched.schedule(at, Ev::ServiceDone { dc, req }).expect("future");
    }

    /// Drive an invocation's handler until it completes, fails, or parks
    /// on an asynchronous effect.
    fn run_steps(&mut self, dc: DcIndex, req: u64) {
        loop {
            let (handler, instance, step, arg, reply, mut scratch) = {
                let Some(inv) = self.sites[dc.0 as usize].running.get_mut(&req) else {
                    return;
                };
                (
                    inv.handler.clone(),
                    inv.instance,
                    inv.step,
                    inv.arg.clone(),
                    std::mem::take(&mut inv.reply),
                    std::mem::take(&mut inv.scratch),
                )
            };
            let out = handler.step(&mut HandlerCtx {
                instance,
                arg: &arg,
                step,
                reply: &reply,
                scratch: &mut scratch,
            });
            if let Some(inv) = self.sites[dc.0 as usize].running.get_mut(&req) {
                inv.scratch = scratch;
            }
            let park = |this: &mut Cluster, then: u32| {
                if let Some(inv) = this.sites[dc.0 as usize].running.get_mut(&req) {
                    inv.step = then;
                }
            };
            match out {
                HandlerStep::Complete(bytes) => {
                    return self.finish_invocation(dc, req, Outcome::Ok(bytes));
                }
                HandlerStep::Fail(msg) => {
                    return self.finish_invocation(dc, req, Outcome::Err(OpError::HandlerFailed(msg)));
                }
                HandlerStep::Commit { attr, op, then } => {
                    match self.effect_commit(dc, req, &attr, op) {
                        EffectOutcome::Ready(bytes) => {
                            park(self, then);
                            if let Some(inv) = self.sites[dc.0 as usize].running.get_mut(&req) {
                                inv.reply = bytes;
                            }
                        }
                        EffectOutcome::Parked => return park(self, then),
                        EffectOutcome::Abort(e) => {
                            return self.finish_invocation(dc, req, Outcome::Err(e));
                        }
                    }
                }
                HandlerStep::Refresh { attr, then } => {
                    match self.effect_refresh(dc, req, &attr) {
                        EffectOutcome::Ready(bytes) => {
                            park(self, then);
                            if let Some(inv) = self.sites[dc.0 as usize].running.get_mut(&req) {
                                inv.reply = bytes;
                            }
                        }
                        EffectOutcome::Parked => return park(self, then),
                        EffectOutcome::Abort(e) => {
                            return self.finish_invocation(dc, req, Outcome::Err(e));
                        }
                    }
                }
                HandlerStep::Invoke { class, instance, function, arg, then } => {
                    match self.effect_invoke(dc, req, class, instance, function, arg) {
                        EffectOutcome::Ready(_) => unreachable!("invoke never completes inline"),
                        EffectOutcome::Parked => return park(self, then),
                        EffectOutcome::Abort(e) => {
                            return self.finish_invocation(dc, req, Outcome::Err(e));
                        }
                    }
                }
            }
        }
    }

    /// Write one attribute under its declared consistency mode.
    fn effect_commit(
        &mut self,
        dc: DcIndex,
        req: u64,
        attr: &str,
        op: WriteOp,
    ) -> EffectOutcome {
        let now = self.sched.now();
        let (class, instance, session, depth) = {
            let Some(inv) = self.sites[dc.0 as usize].running.get(&req) else {
                return EffectOutcome::Abort(OpError::HandlerFailed("lost invocation".into()));
            };
            (inv.class.clone(), inv.instance, inv.session, inv.depth)
        };
        let Some(dcls) = self.classes.get(&class) else {
            return EffectOutcome::Abort(OpError::WrongSite);
        };
        let Some(idx) = dcls.flat.attr_index(attr) else {
            return EffectOutcome::Abort(OpError::HandlerFailed(format!("unknown attribute {attr}")));
        };
        let consistency = dcls.flat.attributes[idx as usize].sla.consistency.clone();
        let key = StoreKey { instance, attr: idx };
        match consistency {
            Consistency::Strong => {
                let payload = encode_strong_op(&key, &op);
                let acts = {
                    let Some(cs) = self.sites[dc.0 as usize].classes.get_mut(&class) else {
                        return EffectOutcome::Abort(OpError::WrongSite);
                    };
                    let Some(raft) = cs.raft.as_mut() else {
                        return EffectOutcome::Abort(OpError::HandlerFailed(
                            "no consensus group".into(),
                        ));
                    };
                    match raft.propose(now, payload) {
                        Err(NotLeader { hint }) => {
                            return EffectOutcome::Abort(OpError::NotLeader { hint });
                        }
                        Ok((index, acts)) => {
                            cs.pending_commit.insert(index, req);
                            acts
                        }
                    }
                };
                self.apply_raft_actions(now, &class, dc, acts);
                self.arm_raft(&class, dc);
                EffectOutcome::Parked
            }
            Consistency::BoundedStaleness { delta_ms } => {
                {
                    let Some(cs) = self.sites[dc.0 as usize].classes.get(&class) else {
                        return EffectOutcome::Abort(OpError::WrongSite);
                    };
                    if let GateDecision::Block { worst_peer, staleness_ms } =
                        cs.sync.gate_with_delta(now, delta_ms)
                    {
                        return EffectOutcome::Abort(OpError::StalenessExceeded {
                            worst_peer,
                            staleness_ms,
                        });
                    }
                }
                self.weak_apply(now, dc, &class, key, op, session, depth)
            }
            Consistency::ReadYourWrite => self.weak_apply(now, dc, &class, key, op, session, depth),
        }
    }

    /// Apply a write to the replica's CRDT store, record it against the
    /// session (so failover preserves it), and fire attribute triggers.
    fn weak_apply(
        &mut self,
        now: SimTime,
        dc: DcIndex,
        class: &str,
        key: StoreKey,
        op: WriteOp,
        session: u64,
        depth: u32,
    ) -> EffectOutcome {
        let (created, value_after) = {
            let Some(cs) = self.sites[dc.0 as usize].classes.get_mut(class) else {
                return EffectOutcome::Abort(OpError::WrongSite);
            };
            let created = cs.store.get(&key).is_none();
            if cs.store.apply_local_write(now, key, op).is_err() {
                return EffectOutcome::Abort(OpError::HandlerFailed(
                    "attribute kind mismatch".into(),
                ));
            }
            (created, cs.store.get(&key).cloned())
        };
        if session != 0 {
            if let (Some(mgr), Some(v)) = (self.sessions.get_mut(class), &value_after) {
                mgr.record_write(session, key, v);
            }
        }
        self.fire_attr_triggers(now, dc, class, key, created, depth + 1);
        EffectOutcome::Ready(Vec::new())
    }

    /// Read one attribute under its declared consistency mode.
    fn effect_refresh(&mut self, dc: DcIndex, req: u64, attr: &str) -> EffectOutcome {
        let now = self.sched.now();
        let (class, instance) = {
            let Some(inv) = self.sites[dc.0 as usize].running.get(&req) else {
                return EffectOutcome::Abort(OpError::HandlerFailed("lost invocation".into()));
            };
            (inv.class.clone(), inv.instance)
        };
        let Some(dcls) = self.classes.get(&class) else {
            return EffectOutcome::Abort(OpError::WrongSite);
        };
        let Some(idx) = dcls.flat.attr_index(attr) else {
            return EffectOutcome::Abort(OpError::HandlerFailed(format!("unknown attribute {attr}")));
        };
        let consistency = dcls.flat.attributes[idx as usize].sla.consistency.clone();
        let key = StoreKey { instance, attr: idx };
        match consistency {
            Consistency::Strong => {
                let acts = {
                    let Some(cs) = self.sites[dc.0 as usize].classes.get_mut(&class) else {
                        return EffectOutcome::Abort(OpError::WrongSite);
                    };
                    let Some(raft) = cs.raft.as_mut() else {
                        return EffectOutcome::Abort(OpError::HandlerFailed(
                            "no consensus group".into(),
                        ));
                    };
                    match raft.register_read(now) {
                        Err(NotLeader { hint }) => {
                            return EffectOutcome::Abort(OpError::NotLeader { hint });
                        }
                        Ok((read_id, acts)) => {
                            cs.pending_read.insert(read_id, (req, key));
                            acts
                        }
                    }
                };
                self.apply_raft_actions(now, &class, dc, acts);
                self.arm_raft(&class, dc);
                EffectOutcome::Parked
            }
            Consistency::BoundedStaleness { delta_ms } => {
                let Some(cs) = self.sites[dc.0 as usize].classes.get(&class) else {
                    return EffectOutcome::Abort(OpError::WrongSite);
                };
                if let GateDecision::Block { worst_peer, staleness_ms } =
                    cs.sync.gate_with_delta(now, delta_ms)
                {
                    return EffectOutcome::Abort(OpError::StalenessExceeded {
                        worst_peer,
                        staleness_ms,
                    });
                }
                EffectOutcome::Ready(read_value_bytes(cs.store.get(&key)))
            }
            Consistency::ReadYourWrite => {
                let Some(cs) = self.sites[dc.0 as usize].classes.get(&class) else {
                    return EffectOutcome::Abort(OpError::WrongSite);
                };
                EffectOutcome::Ready(read_value_bytes(cs.store.get(&key)))
            }
        }
    }

    /// Call a function on another object; the child runs wherever routing
    /// sends it and answers back to this site.
    fn effect_invoke(
        &mut self,
        dc: DcIndex,
        parent: u64,
        class: String,
        instance: u64,
        function: String,
        arg: Vec<u8>,
    ) -> EffectOutcome {
        let now = self.sched.now();
        let depth = self.sites[dc.0 as usize]
            .running
            .get(&parent)
            .map_or(0, |inv| inv.depth);
        if depth + 1 > TRIGGER_DEPTH_MAX {
            return EffectOutcome::Abort(OpError::HandlerFailed("call depth exceeded".into()));
        }
        let dest = match self.route(now, dc, &class, &function) {
            Ok(d) => d,
            Err(e) => return EffectOutcome::Abort(e),
        };
        let child = self.alloc_req();
        let msg = ObjMsg::Request {
            req: child,
            class: class.clone(),
            function,
            instance,
            arg,
            session: 0,
            depth: depth + 1,
        };
        let env = Envelope {
            src: dc,
            dst: dest,
            topic: Topic::Object { class, instance },
            payload: msg.encode(),
            send_time: now,
        };
        self.send_env(env);
        self.sites[dc.0 as usize].children.insert(child, parent);
        self.sched
            .schedule(now + CHILD_TIMEOUT_MS, Ev::ChildTimeout { dc, child })
            .expect("future");
        EffectOutcome::Parked
    }

    /// Complete an invocation: fire function triggers, then answer the
    /// caller (or record the result directly for trigger-spawned work).
    fn finish_invocation(&mut self, dc: DcIndex, req: u64, outcome: Outcome) {
        let now = self.sched.now();
        let Some(inv) = self.sites[dc.0 as usize].running.remove(&req) else {
            return;
        };
        let want = if outcome.is_ok() {
            TriggerEvent::OnComplete
        } else {
            TriggerEvent::OnFailure
        };
        let targets: Vec<String> = self
            .classes
            .get(&inv.class)
            .map(|d| {
                d.flat
                    .triggers
                    .iter()
                    .filter(|t| t.source == inv.function && t.event == want)
                    .map(|t| t.target.clone())
                    .collect()
            })
            .unwrap_or_default();
        for target in targets {
            self.spawn_local(now, dc, &inv.class, &target, inv.instance, inv.depth + 1);
        }
        match inv.reply_to {
            Some(origin) => {
                let msg = ObjMsg::Reply {
                    req,
                    outcome,
                    arrival_ms: inv.arrival_ms,
                    start_ms: inv.start_ms,
                };
                let env = Envelope {
                    src: dc,
                    dst: origin,
                    topic: Topic::Object { class: inv.class.clone(), instance: inv.instance },
                    payload: msg.encode(),
                    send_time: now,
                };
                self.send_env(env);
            }
            None => {
                // Trigger-spawned: record locally for observability.
                self.metrics.record(OpRecord {
                    req,
                    client: u64::MAX,
                    class: inv.class,
                    function: inv.function,
                    instance: inv.instance,
                    session: 0,
                    gateway: dc.0,
                    issued_ms: inv.arrival_ms,
                    finished_ms: now,
                    result: OpResult::Done(outcome),
                    arrival_ms: inv.arrival_ms,
                    start_ms: inv.start_ms,
                    kind: OpKind::Other,
                    value: 0,
                });
            }
        }
    }

    /// Fire attribute triggers for a committed write, at the executing
    /// site only.
    fn fire_attr_triggers(
        &mut self,
        now: SimTime,
        dc: DcIndex,
        class: &str,
        key: StoreKey,
        created: bool,
        depth: u32,
    ) {
        let want = if created { TriggerEvent::OnCreate } else { TriggerEvent::OnUpdate };
        let targets: Vec<String> = {
            let Some(dcls) = self.classes.get(class) else { return };
            let Some(attr) = dcls.flat.attributes.get(key.attr as usize) else {
                return;
            };
            dcls.flat
                .triggers
                .iter()
                .filter(|t| t.source == attr.name && t.event == want)
                .map(|t| t.target.clone())
                .collect()
        };
        for target in targets {
            self.spawn_local(now, dc, class, &target, key.instance, depth);
        }
    }

    /// Start a trigger-spawned invocation locally, with an empty argument.
    fn spawn_local(
        &mut self,
        now: SimTime,
        dc: DcIndex,
        class: &str,
        function: &str,
        instance: u64,
        depth: u32,
    ) {
        if depth > TRIGGER_DEPTH_MAX {
            return;
        }
        let Some(dcls) = self.classes.get(class) else { return };
        let Some(f) = dcls.flat.function(function) else { return };
        let Some(handler) = self.registry.get(&f.handler) else { return };
        let service_ms = (f.mean_service_ms.ceil() as u64).max(1);
        let req = self.alloc_req();
        let inv = Invocation {
            class: class.to_string(),
            function: function.to_string(),
            instance,
            arg: Vec::new(),
            reply_to: None,
            session: 0,
            depth,
            handler,
            step: 0,
            reply: Vec::new(),
            scratch: Vec::new(),
            service_ms,
            lane: None,
            arrival_ms: now,
            start_ms: 0,
        };
        self.admit(now, dc, req, inv);
    }

    // ---- gateway: routing, issue, replies --------------------------------

    /// Pick the replica a request should run at, as seen from `gateway`.
    /// Strong functions go to the (believed) leader; weak functions to the
    /// nearest reachable replica, preferring the function's locality list.
    fn route(
        &self,
        now: SimTime,
        gateway: DcIndex,
        class: &str,
        function: &str,
    ) -> Result<DcIndex, OpError> {
        let dcls = self.classes.get(class).ok_or(OpError::Unavailable)?;
        let f = dcls
            .flat
            .function(function)
            .ok_or_else(|| OpError::HandlerFailed(format!("unknown function {function}")))?;
        let reachable: Vec<DcIndex> = dcls
            .replicas
            .iter()
            .copied()
            .filter(|&r| self.net.reachable(gateway, r, now))
            .collect();
        if reachable.is_empty() {
            return Err(OpError::Unavailable);
        }
        if matches!(f.sla.consistency, Consistency::Strong) {
            if let Some(h) = dcls.leader_hint {
                let d = DcIndex(h);
                if reachable.contains(&d) {
                    return Ok(d);
                }
            }
            return Ok(reachable[0]);
        }
        if let Some(list) = &f.sla.locality {
            for name in list {
                if let Ok(d) = self.net.lookup(name) {
                    if reachable.contains(&d) {
                        return Ok(d);
                    }
                }
            }
        }
        Ok(reachable
            .into_iter()
            .min_by_key(|&r| (self.net.base_latency(gateway, r), r.0))
            .expect("nonempty"))
    }

    /// Send one client operation and arm its timeout.
    #[allow(clippy::too_many_arguments)]
    fn issue(
        &mut self,
        now: SimTime,
        gateway: DcIndex,
        dest: DcIndex,
        class: &str,
        function: &str,
        instance: u64,
        arg: Vec<u8>,
        session: u64,
        client: Option<usize>,
        kind: OpKind,
        value: u64,
    ) {
        let req = self.alloc_req();
        let msg = ObjMsg::Request {
            req,
            class: class.to_string(),
            function: function.to_string(),
            instance,
            arg: arg.clone(),
            session,
            depth: 0,
        };
        let env = Envelope {
            src: gateway,
            dst: dest,
            topic: Topic::Object { class: class.to_string(), instance },
            payload: msg.encode(),
            send_time: now,
        };
        self.send_env(env);
        *self.sec_issued.entry(class.to_string()).or_insert(0) += 1;
        self.pending.insert(
            req,
            PendingOp {
                client,
                hops: 0,
                last: dest,
                class: class.to_string(),
                function: function.to_string(),
                instance,
                arg,
                session,
                gateway,
                issued_ms: now,
                kind,
                value,
            },
        );
        self.sched
            .schedule(now + CLIENT_OP_TIMEOUT_MS, Ev::ClientTimeout { req })
            .expect("future");
    }

    /// A reply reached the gateway: either follow a leader redirect or
    /// finalize the operation.
    fn on_gateway_reply(
        &mut self,
        now: SimTime,
        req: u64,
        mut pc: PendingOp,
        outcome: Outcome,
        arrival_ms: u64,
        start_ms: u64,
    ) {
        let redirect = match &outcome {
            Outcome::Err(OpError::NotLeader { hint }) if pc.hops < REDIRECT_HOPS_MAX => {
                Some(*hint)
            }
            Outcome::Err(OpError::WrongSite) if pc.hops < REDIRECT_HOPS_MAX => Some(None),
            _ => None,
        };
        if let Some(hint) = redirect {
            if let Some(d) = self.classes.get_mut(&pc.class) {
                d.leader_hint = hint;
            }
            let dest = self.redirect_target(now, &pc, hint);
            if let Some(dest) = dest {
                pc.hops += 1;
                pc.last = dest;
                let msg = ObjMsg::Request {
                    req,
                    class: pc.class.clone(),
                    function: pc.function.clone(),
                    instance: pc.instance,
                    arg: pc.arg.clone(),
                    session: pc.session,
                    depth: 0,
                };
                let env = Envelope {
                    src: pc.gateway,
                    dst: dest,
                    topic: Topic::Object { class: pc.class.clone(), instance: pc.instance },
                    payload: msg.encode(),
                    send_time: now,
                };
                self.send_env(env);
                // The original timeout stays armed: redirects spend the
                // same operation budget.
                self.pending.insert(req, pc);
                return;
            }
        }
        self.finalize_op(now, req, pc, OpResult::Done(outcome), arrival_ms, start_ms);
    }

    /// Where to re-send after a leader bounce: the hinted site when it is
    /// a reachable replica, else the next replica in ring order.
    fn redirect_target(&self, now: SimTime, pc: &PendingOp, hint: Option<u16>) -> Option<DcIndex> {
        let dcls = self.classes.get(&pc.class)?;
        let reachable = |r: DcIndex| self.net.reachable(pc.gateway, r, now);
        if let Some(h) = hint {
            let d = DcIndex(h);
            if dcls.replicas.contains(&d) && reachable(d) {
                return Some(d);
            }
        }
        let n = dcls.replicas.len();
        let start = dcls.replicas.iter().position(|&r| r == pc.last).unwrap_or(0);
        (1..=n)
            .map(|i| dcls.replicas[(start + i) % n])
            .find(|&r| reachable(r))
    }

    /// Record a finished (or timed-out) client operation and schedule the
    /// owning closed-loop client's next move.
    fn finalize_op(
        &mut self,
        now: SimTime,
        req: u64,
        pc: PendingOp,
        result: OpResult,
        arrival_ms: u64,
        start_ms: u64,
    ) {
        if result.is_ok() {
            *self.sec_committed.entry(pc.class.clone()).or_insert(0) += 1;
        }
        let value = match (&result, pc.kind) {
            (OpResult::Done(Outcome::Ok(bytes)), OpKind::Read) => parse_counter(bytes),
            _ => pc.value,
        };
        self.metrics.record(OpRecord {
            req,
            client: pc.client.map_or(u64::MAX, |i| i as u64),
            class: pc.class,
            function: pc.function,
            instance: pc.instance,
            session: pc.session,
            gateway: pc.gateway.0,
            issued_ms: pc.issued_ms,
            finished_ms: now,
            result,
            arrival_ms,
            start_ms,
            kind: pc.kind,
            value,
        });
        self.schedule_next_client_op(now, pc.client);
    }

    fn schedule_next_client_op(&mut self, now: SimTime, client: Option<usize>) {
        let Some(i) = client else { return };
        let think = match &self.workloads[self.clients[i].workload].kind {
            WorkloadKind::Sessions { think_ms, .. }
            | WorkloadKind::ClosedLoop { think_ms, .. } => *think_ms,
            WorkloadKind::FixedRate { .. } => return,
        };
        self.sched
            .schedule(now + think.max(1), Ev::ClientWake { client: i })
            .expect("future");
    }

    /// Record an operation that failed before it could leave the gateway.
    #[allow(clippy::too_many_arguments)]
    fn record_local_failure(
        &mut self,
        now: SimTime,
        client: Option<usize>,
        gateway: DcIndex,
        class: &str,
        function: &str,
        instance: u64,
        session: u64,
        kind: OpKind,
        err: OpError,
    ) {
        let req = self.alloc_req();
        *self.sec_issued.entry(class.to_string()).or_insert(0) += 1;
        self.metrics.record(OpRecord {
            req,
            client: client.map_or(u64::MAX, |i| i as u64),
            class: class.to_string(),
            function: function.to_string(),
            instance,
            session,
            gateway: gateway.0,
            issued_ms: now,
            finished_ms: now,
            result: OpResult::Done(Outcome::Err(err)),
            arrival_ms: 0,
            start_ms: 0,
            kind,
            value: 0,
        });
        self.schedule_next_client_op(now, client);
    }

    // ---- client drivers --------------------------------------------------

    fn workload_stopped(&self, w: usize, now: SimTime) -> bool {
        let stop = self.workloads[w].stop_ms;
        stop != 0 && now >= stop
    }

    fn on_client_wake(&mut self, now: SimTime, client: usize) {
        let w = self.clients[client].workload;
        if self.workload_stopped(w, now) {
            return;
        }
        match self.workloads[w].kind.clone() {
            WorkloadKind::Sessions { attr, write_function, read_function, reads_per_write, .. } => {
                self.drive_session_client(
                    now,
                    client,
                    &attr,
                    &write_function,
                    &read_function,
                    reads_per_write,
                );
            }
            WorkloadKind::ClosedLoop { attr, write_function, read_function, read_pct, instances, .. } => {
                self.drive_closed_client(
                    now,
                    client,
                    &attr,
                    &write_function,
                    &read_function,
                    read_pct,
                    instances,
                );
            }
            WorkloadKind::FixedRate { .. } => {}
        }
    }

    fn drive_session_client(
        &mut self,
        now: SimTime,
        client: usize,
        attr: &str,
        write_function: &str,
        read_function: &str,
        reads_per_write: u32,
    ) {
        let w = self.clients[client].workload;
        let class = self.workloads[w].class.clone();
        let gateway = self.clients[client].gateway;
        let instance = self.clients[client].instance;

        // Open the session lazily; failure counts as an unavailable op.
        if self.clients[client].session == 0 {
            let replicas = self.classes[&class].replicas.clone();
            let opened = {
                let net = &self.net;
                self.sessions.get_mut(&class).expect("deployed").open(
                    gateway,
                    &replicas,
                    |dc| net.reachable(gateway, dc, now),
                    |dc| net.base_latency(gateway, dc),
                )
            };
            match opened {
                Ok(token) => self.clients[client].session = token,
                Err(_) => {
                    return self.record_local_failure(
                        now,
                        Some(client),
                        gateway,
                        &class,
                        write_function,
                        instance,
                        0,
                        OpKind::Write,
                        OpError::Unavailable,
                    );
                }
            }
        }
        let session = self.clients[client].session;

        // Session ops go to the pinned replica; move the pin first if it
        // became unreachable.
        let pinned = self
            .sessions
            .get(&class)
            .and_then(|m| m.replica_for(session).ok());
        let Some(mut pin) = pinned else {
            return self.record_local_failure(
                now, Some(client), gateway, &class, write_function, instance, session,
                OpKind::Write, OpError::Unavailable,
            );
        };
        if !self.net.reachable(gateway, pin, now) {
            match self.repin_session(now, &class, session, gateway) {
                Ok(p) => pin = p,
                Err(e) => {
                    // A session whose writes exist on no reachable replica
                    // is unrecoverable (the sole holder is gone): drop it
                    // and start fresh on the next wake. The guarantee is
                    // per session, and this one ends here — visibly.
                    if matches!(e, OpError::NoQualifiedReplica) {
                        if let Some(mgr) = self.sessions.get_mut(&class) {
                            mgr.close(session);
                        }
                        self.clients[client].session = 0;
                        self.clients[client].reads_left = 0;
                    }
                    return self.record_local_failure(
                        now, Some(client), gateway, &class, write_function, instance, session,
                        OpKind::Write, e,
                    );
                }
            }
        }

        if self.clients[client].reads_left == 0 {
            self.clients[client].reads_left = reads_per_write;
            let v = self.next_counter(&class, instance, attr);
            let arg = args::put(attr, &counter_value(v));
            self.issue(
                now, gateway, pin, &class, write_function, instance, arg, session,
                Some(client), OpKind::Write, v,
            );
        } else {
            self.clients[client].reads_left -= 1;
            let arg = args::get(attr);
            self.issue(
                now, gateway, pin, &class, read_function, instance, arg, session,
                Some(client), OpKind::Read, 0,
            );
        }
    }

    /// Move a session's pin to a reachable replica that already holds all
    /// its writes (consulted directly: pin moves are metadata-only).
    fn repin_session(
        &mut self,
        now: SimTime,
        class: &str,
        session: u64,
        gateway: DcIndex,
    ) -> Result<DcIndex, OpError> {
        let replicas = self
            .classes
            .get(class)
            .map(|d| d.replicas.clone())
            .unwrap_or_default();
        let Cluster { sites, sessions, net, .. } = self;
        let Some(mgr) = sessions.get_mut(class) else {
            return Err(OpError::Unavailable);
        };
        let mut candidates: Vec<(DcIndex, &ReplicaStore)> = Vec::new();
        for &r in &replicas {
            if let Some(cs) = sites[r.0 as usize].classes.get(class) {
                candidates.push((r, &cs.store));
            }
        }
        mgr.repin(
            session,
            &candidates,
            |dc| net.reachable(gateway, dc, now),
            |dc| net.base_latency(gateway, dc),
        )
        .map_err(|e| match e {
            SessionError::NoQualifiedReplica => OpError::NoQualifiedReplica,
            _ => OpError::Unavailable,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn drive_closed_client(
        &mut self,
        now: SimTime,
        client: usize,
        attr: &str,
        write_function: &str,
        read_function: &str,
        read_pct: u8,
        instances: u64,
    ) {
        let w = self.clients[client].workload;
        let class = self.workloads[w].class.clone();
        let gateway = self.clients[client].gateway;
        let read = self.rng.gen_range(0..100u8) < read_pct;
        let instance = self.rng.gen_range(0..instances.max(1));
        let (function, arg, kind, value) = if read {
            (read_function, args::get(attr), OpKind::Read, 0)
        } else {
            let v = self.next_counter(&class, instance, attr);
            (write_function, args::put(attr, &counter_value(v)), OpKind::Write, v)
        };
        match self.route(now, gateway, &class, function) {
            Ok(dest) => self.issue(
                now, gateway, dest, &class, function, instance, arg, 0,
                Some(client), kind, value,
            ),
            Err(e) => self.record_local_failure(
                now, Some(client), gateway, &class, function, instance, 0, kind, e,
            ),
        }
    }

    fn on_rate_tick(&mut self, now: SimTime, w: usize) {
        if self.workload_stopped(w, now) {
            return;
        }
        let spec = self.workloads[w].clone();
        let WorkloadKind::FixedRate { rps, function, arg, instances } = &spec.kind else {
            return;
        };
        let gateway = self.rates[w].gateway;
        let n = {
            let rs = &mut self.rates[w];
            rs.carry += rps;
            let n = rs.carry / 1000;
            rs.carry %= 1000;
            n
        };
        for _ in 0..n {
            let idx = {
                let rs = &mut self.rates[w];
                let idx = rs.next_instance % (*instances).max(1);
                rs.next_instance += 1;
                idx
            };
            let instance = 2_000_000 + (w as u64) * 10_000 + idx;
            let (bytes, kind, value) = match arg {
                ArgSpec::Empty => (Vec::new(), OpKind::Other, 0),
                ArgSpec::PutCounter { attr } => {
                    let v = self.next_counter(&spec.class, instance, attr);
                    (args::put(attr, &counter_value(v)), OpKind::Write, v)
                }
                ArgSpec::Get { attr } => (args::get(attr), OpKind::Read, 0),
                ArgSpec::Incr { attr } => (args::incr(attr, 1), OpKind::Write, 0),
                ArgSpec::Relay { class, instance: target, function: tf } => {
                    (args::relay(class, *target, tf, b"x"), OpKind::Other, 0)
                }
            };
            match self.route(now, gateway, &spec.class, function) {
                Ok(dest) => self.issue(
                    now, gateway, dest, &spec.class, function, instance, bytes, 0, None,
                    kind, value,
                ),
                Err(e) => self.record_local_failure(
                    now, None, gateway, &spec.class, function, instance, 0, kind, e,
                ),
            }
        }
        self.sched
            .schedule(now + 1, Ev::RateTick { workload: w })
            .expect("future");
    }

    // ---- anti-entropy ----------------------------------------------------

    /// Start one sync round towards `peer` and arm its idle check. Rounds
    /// reschedule themselves: at the sync period after success, after a
    /// short retry delay on abort, never once either replica is gone.
    fn on_ae_round(&mut self, now: SimTime, class: &str, dc: DcIndex, peer: DcIndex) {
        let Some(dcls) = self.classes.get(class) else { return };
        if !dcls.replicas.contains(&dc)
            || !dcls.replicas.contains(&peer)
            || self.net.is_dead(dc)
            || self.net.is_dead(peer)
        {
            return;
        }
        let (session, msg) = {
            let Some(cs) = self.sites[dc.0 as usize].classes.get_mut(class) else {
                return;
            };
            let (session, msg) = cs.ae.start_round(now, peer.0, &mut cs.store);
            cs.ae_last.insert(session, (now, Some(peer.0)));
            (session, msg)
        };
        let env = Envelope {
            src: dc,
            dst: peer,
            topic: Topic::anti_entropy(class, self.net.name(dc), self.net.name(peer)),
            payload: msg.encode(),
            send_time: now,
        };
        self.send_env(env);
        self.sched
            .schedule(
                now + AE_IDLE_ABORT_MS,
                Ev::AeIdleCheck { class: class.to_string(), dc, session },
            )
            .expect("future");
    }

    fn on_ae_idle_check(&mut self, now: SimTime, class: &str, dc: DcIndex, session: u64) {
        if self.net.is_dead(dc) {
            return;
        }
        let verdict = {
            let Some(cs) = self.sites[dc.0 as usize].classes.get_mut(class) else {
                return;
            };
            match cs.ae_last.get(&session) {
                None => None, // round already finished
                Some(&(last, peer)) if last + AE_IDLE_ABORT_MS <= now => {
                    cs.ae.on_deadline(session);
                    cs.ae_last.remove(&session);
                    Some(Err(peer))
                }
                Some(&(last, _)) => Some(Ok(last)),
            }
        };
        match verdict {
            None => {}
            Some(Ok(last)) => {
                self.sched
                    .schedule(
                        last + AE_IDLE_ABORT_MS,
                        Ev::AeIdleCheck { class: class.to_string(), dc, session },
                    )
                    .expect("future");
            }
            Some(Err(peer)) => {
                // We initiated: try again shortly (cheap while partitioned,
                // prompt once healed).
                if let Some(p) = peer {
                    self.sched
                        .schedule(
                            now + AE_RETRY_MS,
                            Ev::AeRound { class: class.to_string(), dc, peer: DcIndex(p) },
                        )
                        .expect("future");
                }
            }
        }
    }

    fn on_ae_msg(&mut self, now: SimTime, class: &str, env: Envelope) {
        let dc = env.dst;
        let Ok(msg) = AeMsg::decode(&env.payload) else { return };
        let session = msg.session();
        let acts = {
            let Some(cs) = self.sites[dc.0 as usize].classes.get_mut(class) else {
                return;
            };
            if let Some(e) = cs.ae_last.get_mut(&session) {
                e.0 = now;
            }
            cs.ae.on_message(now, env.src.0, msg, &mut cs.store, &mut cs.sync)
        };
        for act in acts {
            match act {
                AeAction::Send { to, msg } => {
                    let env = Envelope {
                        src: dc,
                        dst: DcIndex(to),
                        topic: Topic::anti_entropy(class, self.net.name(dc), self.net.name(DcIndex(to))),
                        payload: msg.encode(),
                        send_time: now,
                    };
                    self.send_env(env);
                }
                AeAction::Opened { session } => {
                    if let Some(cs) = self.sites[dc.0 as usize].classes.get_mut(class) {
                        cs.ae_last.insert(session, (now, None));
                    }
                    self.sched
                        .schedule(
                            now + AE_IDLE_ABORT_MS,
                            Ev::AeIdleCheck { class: class.to_string(), dc, session },
                        )
                        .expect("future");
                }
                AeAction::RoundComplete { peer } => {
                    let initiated = {
                        let Some(cs) = self.sites[dc.0 as usize].classes.get_mut(class) else {
                            continue;
                        };
                        let was = cs.ae_last.remove(&session).and_then(|(_, p)| p);
                        (was.is_some()).then(|| cs.sync.period_ms())
                    };
                    if let Some(period) = initiated {
                        self.sched
                            .schedule(
                                now + period,
                                Ev::AeRound {
                                    class: class.to_string(),
                                    dc,
                                    peer: DcIndex(peer),
                                },
                            )
                            .expect("future");
                    }
                }
            }
        }
    }

    // ---- control loop ----------------------------------------------------

    fn on_monitor_tick(&mut self, now: SimTime) {
        // Failure estimators learn from control-plane probes: a site counts
        // as failed when the control site cannot reach it.
        for i in 0..self.profiles.len() {
            let dc = DcIndex(i as u16);
            let failed =
                self.net.is_dead(dc) || !self.net.reachable(self.control_dc, dc, now);
            self.estimators[i].observe(failed);
        }

        let names: Vec<String> = self.classes.keys().cloned().collect();
        let mut actions = Vec::new();
        for name in &names {
            let dcls = &self.classes[name];
            let alive = dcls
                .replicas
                .iter()
                .filter(|&&r| !self.net.is_dead(r))
                .count();
            let replicas_ok = alive >= dcls.target_replicas;

            let mut staleness_max = 0u64;
            if dcls.weak {
                for &r in &dcls.replicas {
                    if self.net.is_dead(r) {
                        continue;
                    }
                    if let Some(cs) = self.sites[r.0 as usize].classes.get(name) {
                        if let Some((_, s)) = cs.sync.worst_staleness(now) {
                            staleness_max = staleness_max.max(s);
                        }
                    }
                }
            }
            let staleness_ok = dcls
                .bounded_delta_ms
                .map_or(true, |d| staleness_max <= d);

            let issued = *self.sec_issued.get(name).unwrap_or(&0);
            let committed = *self.sec_committed.get(name).unwrap_or(&0);
            let floor = dcls.reserved_rps;
            let throughput_ok = floor == 0 || issued < floor || committed >= floor;

            let mut partition_active = false;
            'outer: for (i, &a) in dcls.replicas.iter().enumerate() {
                for &b in &dcls.replicas[i + 1..] {
                    if self
                        .net
                        .separated_during(a, b, now.saturating_sub(MONITOR_PERIOD_MS), now)
                    {
                        partition_active = true;
                        break 'outer;
                    }
                }
            }

            let sample = PeriodSample {
                class: name.clone(),
                replicas_ok,
                staleness_ok,
                throughput_ok,
                partition_active,
            };
            if let Some(act) = self.monitor.observe(&sample) {
                actions.push(act);
            }
            self.metrics.class_seconds.insert(
                (now / 1000, name.clone()),
                ClassSecond { staleness_max_ms: staleness_max, replica_count: alive as u32 },
            );
        }
        self.sec_issued.clear();
        self.sec_committed.clear();
        for act in actions {
            self.on_monitor_action(now, act);
        }
        self.sched
            .schedule(now + MONITOR_PERIOD_MS, Ev::MonitorTick)
            .expect("future");
    }

    fn on_monitor_action(&mut self, now: SimTime, act: MonitorAction) {
        match act {
            MonitorAction::Correct(c) => self.try_correction(now, c),
            MonitorAction::Retry { correction, at } => {
                let class = correction.class().to_string();
                self.pending_corrections.insert(class.clone(), correction);
                self.sched
                    .schedule(at.max(now), Ev::CorrectionRetry { class })
                    .expect("future");
            }
            MonitorAction::GiveUp { .. } => {
                // Recorded by the monitor itself; nothing to enact.
            }
        }
    }

    fn try_correction(&mut self, now: SimTime, c: Correction) {
        if self.enact_correction(now, &c) {
            self.monitor.correction_done(c.class());
            self.corrections_applied.push((now, c));
        } else if let Some(act) = self.monitor.correction_failed(c.class(), now) {
            self.on_monitor_action(now, act);
        }
    }

    /// Apply one correction. Weak classes grow or relocate replicas by
    /// copying state through anti-entropy; strong classes cannot change
    /// their consensus membership here, so those corrections fail and the
    /// monitor escalates to giving up.
    fn enact_correction(&mut self, now: SimTime, c: &Correction) -> bool {
        match c {
            Correction::AddReplica { class } | Correction::Redeploy { class } => {
                let Some(dcls) = self.classes.get(class) else { return false };
                if dcls.strong {
                    return false;
                }
                let existing = dcls.replicas.clone();
                let est: Vec<f64> = self.estimators.iter().map(|e| e.prob()).collect();
                let rotation = self.rotation;
                self.rotation += 1;
                let net = &self.net;
                let usable =
                    |dc: DcIndex| !net.is_dead(dc) && !existing.contains(&dc);
                let Ok(placed) =
                    place_class(1, None, &self.profiles, &est, &usable, rotation)
                else {
                    return false;
                };
                self.attach_replica(now, class, placed[0]);
                true
            }
            Correction::GrowReservation { class } => {
                let Some(dcls) = self.classes.get(class) else { return false };
                if dcls.reserved_rps == 0 {
                    return false;
                }
                let new_total = dcls.reserved_rps + (dcls.reserved_rps / 4).max(1);
                let replicas = dcls.replicas.clone();
                let mean = dcls
                    .flat
                    .functions
                    .iter()
                    .map(|f| f.mean_service_ms)
                    .fold(1.0_f64, f64::max);
                let mean_ms = (mean.ceil() as u64).max(1);
                let caps: Vec<u32> = replicas
                    .iter()
                    .map(|d| self.profiles[d.0 as usize].capacity)
                    .collect();
                let shares = split_throughput(new_total, &caps);
                for (&dc, &share) in replicas.iter().zip(&shares) {
                    let slots = slots_for_rate(share, mean_ms);
                    if self.sites[dc.0 as usize].pool.reserve(class, slots).is_err() {
                        return false;
                    }
                }
                if let Some(d) = self.classes.get_mut(class) {
                    d.reserved_rps = new_total;
                }
                true
            }
        }
    }

    /// Wire a fresh replica of a weak class into the anti-entropy mesh;
    /// the first rounds copy the state over.
    fn attach_replica(&mut self, now: SimTime, class: &str, dc: DcIndex) {
        let (peers, delta) = {
            let Some(dcls) = self.classes.get_mut(class) else { return };
            let peers = dcls.replicas.clone();
            dcls.replicas.push(dc);
            (peers, dcls.sync_delta_ms)
        };
        let mut cs = ClassSite {
            raft: None,
            armed: Vec::new(),
            store: ReplicaStore::new(dc.0),
            strong_store: ReplicaStore::new(dc.0),
            sync: ReplicaSyncState::new(dc.0, delta),
            ae: AeEndpoint::new(dc.0),
            ae_last: BTreeMap::new(),
            pending_commit: BTreeMap::new(),
            pending_read: BTreeMap::new(),
        };
        for &p in &peers {
            cs.sync.note_peer(p.0, now);
        }
        self.sites[dc.0 as usize].classes.insert(class.to_string(), cs);
        let mut stagger = 0;
        for &p in &peers {
            if let Some(pcs) = self.sites[p.0 as usize].classes.get_mut(class) {
                pcs.sync.note_peer(dc.0, now);
            }
            let (a, b) = (dc.min(p), dc.max(p));
            self.sched
                .schedule(
                    now + 25 + stagger,
                    Ev::AeRound { class: class.to_string(), dc: a, peer: b },
                )
                .expect("future");
            stagger += 7;
        }
    }

    /// Permanent site death: messages stop, pools stop, every class loses
    /// that replica, and surviving replicas stop counting it as a peer.
    fn on_kill_site(&mut self, dc: DcIndex) {
        self.net.fail_site(dc);
        let Cluster { classes, sites, .. } = self;
        for (name, dcls) in classes.iter_mut() {
            if !dcls.replicas.contains(&dc) {
                continue;
            }
            dcls.replicas.retain(|&r| r != dc);
            if dcls.leader_hint == Some(dc.0) {
                dcls.leader_hint = None;
            }
            for &r in &dcls.replicas {
                if let Some(cs) = sites[r.0 as usize].classes.get_mut(name) {
                    cs.sync.remove_peer(dc.0);
                }
            }
        }
    }
}

/// Value bytes returned by a read: register contents, a counter total in
/// big-endian, or a record-encoded map of live entries.
fn read_value_bytes(v: Option<&CrdtValue>) -> Vec<u8> {
    match v {
        None => Vec::new(),
        Some(CrdtValue::Register(r)) => r.value.clone().unwrap_or_default(),
        Some(CrdtValue::Counter(c)) => counter_value(c.total()),
        Some(CrdtValue::Map(m)) => {
            let live: Vec<(&Vec<u8>, &Vec<u8>)> = m
                .entries
                .iter()
                .filter_map(|(k, reg)| reg.value.as_ref().map(|v| (k, v)))
                .collect();
            let mut w = RecordWriter::new().u32(live.len() as u32);
            for (k, v) in live {
                w = w.bytes(k).bytes(v);
            }
            w.finish()
        }
    }
}

/// Wire form of one strong write, carried as a consensus log payload.
fn encode_strong_op(key: &StoreKey, op: &WriteOp) -> Vec<u8> {
    let w = RecordWriter::new().bytes(&key.encode());
    match op {
        WriteOp::RegisterSet(v) => w.u8(1).bytes(v),
        WriteOp::RegisterClear => w.u8(2),
        WriteOp::CounterAdd(n) => w.u8(3).u64(*n),
        WriteOp::MapPut(k, v) => w.u8(4).bytes(k).bytes(v),
        WriteOp::MapDelete(k) => w.u8(5).bytes(k),
    }
    .finish()
}

fn decode_strong_op(buf: &[u8]) -> Result<(StoreKey, WriteOp), WireError> {
    let mut r = RecordReader::new(buf);
    let key = StoreKey::decode(r.bytes()?)?;
    let op = match r.u8()? {
        1 => WriteOp::RegisterSet(r.bytes()?.to_vec()),
        2 => WriteOp::RegisterClear,
        3 => WriteOp::CounterAdd(r.u64()?),
        4 => WriteOp::MapPut(r.bytes()?.to_vec(), r.bytes()?.to_vec()),
        5 => WriteOp::MapDelete(r.bytes()?.to_vec()),
        t => return Err(WireError::BadTag(t)),
    };
    Ok((key, op))
}
