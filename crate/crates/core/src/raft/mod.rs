//! Strong consistency via leader-based consensus.
//!
//! One replication group runs per strong class. The [`node`] state machine
//! is transport-free; the cluster runtime feeds it messages and timer
//! wakeups and routes the actions it emits. Writes commit through the
//! replicated log; reads go through a quorum barrier so they always observe
//! committed state — under partitions the minority side refuses service
//! rather than serve stale data.
//!
//! [`check`] holds the safety checkers used by the randomized harness in
//! [`testing`], which replays seeded adversarial schedules (partitions,
//! message loss, leader churn) and audits every run.

pub mod check;
pub mod msg;
pub mod node;
pub mod testing;

pub use check::{check_log_matching, check_trace, SafetyViolation, TraceEvent};
pub use msg::{Entry, RaftMsg};
pub use node::{
    NodeId, NotLeader, RaftAction, RaftNode, Role, CHECK_QUORUM_MS, ELECTION_MAX_MS,
    ELECTION_MIN_MS, HEARTBEAT_MS,
};
pub use testing::{run_cluster, ClusterRunConfig, ClusterRunReport};
