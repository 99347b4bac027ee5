//! Deterministic discrete-event simulation core.
//!
//! A single [`Scheduler`] owns the virtual clock (milliseconds, `u64`) and a
//! priority queue of events ordered by `(time, insertion sequence)` — two
//! events at the same timestamp always fire in the order they were
//! scheduled. [`Network`] models inter-datacenter links: a symmetric one-way
//! latency matrix, optional per-message jitter, scripted partitions, and
//! whole-site failures. Messages crossing a partitioned link at *any* point
//! of their flight window are dropped, never delayed; healing is
//! instantaneous.
//!
//! Nothing in this module spawns threads or reads wall-clock time. Replaying
//! the same schedule against the same seed reproduces the same event order,
//! which is what makes whole-cluster traces reproducible.

mod net;
mod sched;
mod topic;
pub mod wire;

pub use net::{DcIndex, Envelope, Network, NetworkError, Partition, SendOutcome};
pub use sched::{EventHandle, Scheduler, SchedulerError, SimTime};
pub use topic::{Topic, TopicParseError};
