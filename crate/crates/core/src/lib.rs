//! Desk-scale distributed object runtime with declarative SLA enforcement,
//! running on a deterministic discrete-event network simulator.
//!
//! The library models a small fleet of edge and cloud datacenters. Users
//! declare *classes* (attributes + functions + triggers) annotated with SLAs
//! for consistency, availability, throughput and locality. A control plane
//! places replicas to meet the declared targets, and three interchangeable
//! replication strategies enforce the consistency modes:
//!
//! * [`raft`] — leader-based consensus for `strong` attributes,
//! * [`antientropy`] — Merkle-search-tree reconciliation over CRDTs for
//!   `bounded_staleness` attributes,
//! * [`session`] — pinned-replica session tokens for `ryw` (read-your-write)
//!   attributes, layered on the anti-entropy stores.
//!
//! Everything runs single-threaded on a virtual millisecond clock
//! ([`sim::Scheduler`]); all randomness flows from one seeded PRNG, so a
//! scenario script plus a seed reproduces the same trace and the same exported
//! report, byte for byte.
//!
//! [`cluster`] wires the pieces together and drives the event loop;
//! [`cluster::scenario`] and [`cluster::report`] load scripts and export
//! per-second metrics.

pub mod antientropy;
pub mod cluster;
pub mod control;
pub mod model;
pub mod raft;
pub mod runtime;
pub mod session;
pub mod sim;
