//! Seeded random cluster harness for the consensus layer.
//!
//! Spins up a group over the simulated network, drives client proposals and
//! barrier reads while partitions come and go, then audits the recorded
//! trace with the [`super::check`] checkers and verifies liveness: a marker
//! command proposed after the final heal must commit promptly.
//!
//! Everything derives from the one seed — topology latencies, partition
//! schedule, client behaviour — so a failing seed replays exactly.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::check::{check_log_matching, check_trace, SafetyViolation, TraceEvent};
use super::msg::RaftMsg;
use super::node::{NotLeader, RaftAction, RaftNode};
use crate::model::{DatacenterProfile, Tier};
use crate::sim::{DcIndex, Envelope, Network, Scheduler, SimTime, Topic};

pub struct ClusterRunConfig {
    pub seed: u64,
    pub nodes: usize,
    pub run_ms: u64,
    /// Number of (time-disjoint) partition windows to inject.
    pub partitions: usize,
    pub propose_period_ms: u64,
}

impl ClusterRunConfig {
    /// A short adversarial run: two partitions, steady client load, a few
    /// seconds of calm tail for the liveness probe.
    pub fn quick(seed: u64, nodes: usize) -> ClusterRunConfig {
        ClusterRunConfig { seed, nodes, run_ms: 15_000, partitions: 2, propose_period_ms: 100 }
    }
}

#[derive(Debug)]
pub struct ClusterRunReport {
    pub elections: usize,
    pub committed: u64,
    pub reads_served: u64,
    pub final_heal_ms: SimTime,
    /// Delay from the final heal to the first commit of the liveness
    /// marker; `None` means the marker never committed — a liveness bug.
    pub marker_latency_ms: Option<u64>,
}

#[derive(PartialEq, Eq)]
enum Ev {
    Deliver(Envelope),
    Wakeup(u16),
    ClientTick,
    Marker,
}

impl From<Envelope> for Ev {
    fn from(env: Envelope) -> Ev {
        Ev::Deliver(env)
    }
}

const MARKER: &[u8] = b"liveness-marker";

pub fn run_cluster(cfg: &ClusterRunConfig) -> Result<ClusterRunReport, SafetyViolation> {
    assert!(cfg.nodes >= 1 && cfg.nodes <= 7);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Random symmetric full-mesh topology, 5..=30 ms per link.
    let names: Vec<String> = (0..cfg.nodes).map(|i| format!("site-{i}")).collect();
    let mut latency: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for i in 0..cfg.nodes {
        for j in i + 1..cfg.nodes {
            latency.insert((i, j), rng.gen_range(5..=30));
        }
    }
    let profiles: Vec<DatacenterProfile> = (0..cfg.nodes)
        .map(|i| DatacenterProfile {
            id: names[i].clone(),
            tier: if i == 0 { Tier::Cloud } else { Tier::Edge },
            capacity: 4,
            failure_prob: 0.01,
            region_latency: (0..cfg.nodes)
                .filter(|&j| j != i)
                .map(|j| {
                    let key = (i.min(j), i.max(j));
                    (names[j].clone(), latency[&key])
                })
                .collect(),
        })
        .collect();
    let mut net = Network::new(&profiles, 1, (0, 5)).expect("valid harness topology");
    let mut sched: Scheduler<Ev> = Scheduler::new();

    let members: Vec<u16> = (0..cfg.nodes as u16).collect();
    let mut nodes: Vec<RaftNode> = members
        .iter()
        .map(|&i| RaftNode::new(i, members.clone(), 0, &mut rng))
        .collect();

    // Disjoint partition windows inside [1s, run end - 4s], leaving a calm
    // tail for the liveness marker.
    let heal_deadline = cfg.run_ms.saturating_sub(4_000);
    let mut final_heal_ms = 0;
    if cfg.partitions > 0 && heal_deadline > 1_000 {
        let span = (heal_deadline - 1_000) / cfg.partitions as u64;
        for w in 0..cfg.partitions {
            let window_start = 1_000 + w as u64 * span;
            let dur = rng.gen_range(500..=(span * 2 / 3).max(501));
            let start = window_start + rng.gen_range(0..span.saturating_sub(dur).max(1));
            let mask: u64 = rng.gen_range(1..(1u64 << cfg.nodes) - 1);
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for i in 0..cfg.nodes as u16 {
                if mask & (1 << i) != 0 {
                    a.push(DcIndex(i));
                } else {
                    b.push(DcIndex(i));
                }
            }
            net.inject_partition(0, &[a, b], start, dur)
                .expect("disjoint windows never overlap");
            final_heal_ms = final_heal_ms.max(start + dur);
        }
    }

    let mut armed: Vec<SimTime> = vec![SimTime::MAX; cfg.nodes];
    for i in 0..cfg.nodes {
        let at = nodes[i].next_wakeup();
        sched.schedule(at, Ev::Wakeup(i as u16)).unwrap();
        armed[i] = at;
    }
    sched.schedule(cfg.propose_period_ms, Ev::ClientTick).unwrap();
    sched.schedule(final_heal_ms + 50, Ev::Marker).unwrap();

    let mut trace: Vec<TraceEvent> = Vec::new();
    let mut elections = 0usize;
    let mut reads_served = 0u64;
    let mut guess: usize = 0;
    let mut proposal_no = 0u64;
    let mut marker_applied_at: Option<SimTime> = None;

    // Process one node's actions: route sends, record trace events.
    fn process(
        node_idx: usize,
        acts: Vec<RaftAction>,
        now: SimTime,
        nodes: &[RaftNode],
        net: &mut Network,
        sched: &mut Scheduler<Ev>,
        rng: &mut ChaCha8Rng,
        trace: &mut Vec<TraceEvent>,
        elections: &mut usize,
        reads_served: &mut u64,
        marker_applied_at: &mut Option<SimTime>,
    ) {
        for act in acts {
            match act {
                RaftAction::Send { to, msg } => {
                    let env = Envelope {
                        src: DcIndex(node_idx as u16),
                        dst: DcIndex(to),
                        topic: Topic::Raft { class: "grp".into(), shard: 0 },
                        payload: msg.encode(),
                        send_time: now,
                    };
                    net.send(sched, env, rng).expect("send");
                }
                RaftAction::Elected { term } => {
                    *elections += 1;
                    trace.push(TraceEvent::Elected {
                        at_ms: now,
                        node: node_idx as u16,
                        term,
                        log: nodes[node_idx].log().to_vec(),
                    });
                }
                RaftAction::Committed { index, term, payload } => {
                    if payload == MARKER && marker_applied_at.is_none() {
                        *marker_applied_at = Some(now);
                    }
                    trace.push(TraceEvent::Applied {
                        at_ms: now,
                        node: node_idx as u16,
                        index,
                        term,
                        payload,
                    });
                }
                RaftAction::ReadReady { .. } => *reads_served += 1,
                RaftAction::SteppedDown => {}
            }
        }
    }

    macro_rules! handle {
        ($i:expr, $acts:expr, $now:expr) => {
            process(
                $i,
                $acts,
                $now,
                &nodes,
                &mut net,
                &mut sched,
                &mut rng,
                &mut trace,
                &mut elections,
                &mut reads_served,
                &mut marker_applied_at,
            )
        };
    }
    macro_rules! arm {
        ($i:expr, $now:expr) => {{
            let at = nodes[$i].next_wakeup().max($now);
            if at < armed[$i] && at != SimTime::MAX {
                sched.schedule(at, Ev::Wakeup($i as u16)).unwrap();
                armed[$i] = at;
            }
        }};
    }

    while let Some((now, ev)) = sched.pop() {
        if now > cfg.run_ms {
            break;
        }
        match ev {
            Ev::Wakeup(i) => {
                let i = i as usize;
                armed[i] = SimTime::MAX;
                let acts = nodes[i].on_wakeup(now, &mut rng);
                handle!(i, acts, now);
                arm!(i, now);
            }
            Ev::Deliver(env) => {
                if net.accept_delivery(&env, now) {
                    let i = env.dst.0 as usize;
                    let msg = RaftMsg::decode(&env.payload).expect("well-formed peer message");
                    let acts = nodes[i].on_message(now, env.src.0, msg, &mut rng);
                    handle!(i, acts, now);
                    arm!(i, now);
                }
            }
            Ev::ClientTick => {
                proposal_no += 1;
                let want_read = rng.gen_bool(0.25);
                let outcome = if want_read {
                    nodes[guess].register_read(now).map(|(_, acts)| acts)
                } else {
                    nodes[guess]
                        .propose(now, format!("w{proposal_no}").into_bytes())
                        .map(|(_, acts)| acts)
                };
                match outcome {
                    Ok(acts) => {
                        handle!(guess, acts, now);
                        arm!(guess, now);
                    }
                    Err(NotLeader { hint }) => {
                        guess = match hint {
                            Some(h) => h as usize,
                            None => rng.gen_range(0..cfg.nodes),
                        };
                    }
                }
                sched.schedule(now + cfg.propose_period_ms, Ev::ClientTick).unwrap();
            }
            Ev::Marker => {
                if marker_applied_at.is_some() {
                    continue;
                }
                // Follow leader hints, then propose the marker; retry on a
                // short timer until it commits.
                let mut target = guess;
                for _ in 0..10 {
                    match nodes[target].propose(now, MARKER.to_vec()) {
                        Ok((_, acts)) => {
                            guess = target;
                            handle!(target, acts, now);
                            arm!(target, now);
                            break;
                        }
                        Err(NotLeader { hint: Some(h) }) if (h as usize) != target => {
                            target = h as usize;
                        }
                        Err(_) => break,
                    }
                }
                sched.schedule(now + 200, Ev::Marker).unwrap();
            }
        }
    }

    check_trace(&trace)?;
    let logs: Vec<(u16, Vec<_>)> = nodes
        .iter()
        .map(|n| (n.id(), n.log().to_vec()))
        .collect();
    check_log_matching(&logs)?;

    Ok(ClusterRunReport {
        elections,
        committed: nodes.iter().map(|n| n.commit_index()).max().unwrap_or(0),
        reads_served,
        final_heal_ms,
        marker_latency_ms: marker_applied_at.map(|t| t - final_heal_ms),
    })
}
