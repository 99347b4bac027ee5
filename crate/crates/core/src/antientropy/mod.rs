//! Anti-entropy replication for weakly consistent attributes.
//!
//! Replicas hold CRDT values keyed by `(object instance, attribute)`. Each
//! replica summarizes its contents in a Merkle search tree; a periodic sync
//! round walks the trees of a replica pair, fetching only subtrees whose
//! hashes differ, then exchanges the divergent keys and merges both sides.
//! Staleness is bounded by gating reads *and* writes on the age of the last
//! successful sync with the most-stale peer.
//!
//! The pieces:
//! * [`crdt`] — the value types (LWW register, grow-only counter, LWW map)
//!   and their join,
//! * [`mst`] — content-addressed search tree and the incremental diff walk,
//! * [`store`] — one replica's key space plus its cached tree,
//! * [`state`] — per-replica sync clocks and the staleness gate,
//! * [`protocol`] — the multi-message sync round as chained events.

pub mod crdt;
pub mod mst;
pub mod protocol;
pub mod state;
pub mod store;

pub use crdt::{CrdtValue, GCounter, KindMismatch, LwwMap, LwwRegister, Stamp, crdt_merge};
pub use mst::{DiffWalk, FetchFailed, MerkleSearchTree, MstNode, WalkStep, mst_build, mst_diff};
pub use protocol::{AeAction, AeEndpoint, AeMsg};
pub use state::{GateDecision, ReplicaSyncState};
pub use store::{ReplicaStore, StoreKey, WriteOp};
