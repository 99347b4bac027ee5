//! Per-replica storage for one class: CRDT values keyed by object instance
//! and attribute, with a cached search tree over the whole key space.
//!
//! The store is where local writes mint stamps and remote states merge in.
//! Its tree is rebuilt lazily after mutations; sync sessions take a snapshot
//! of the tree so an in-progress walk is never invalidated by live writes.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::crdt::{CrdtValue, KindMismatch, Stamp};
use super::mst::{mst_build, HashVal, MerkleSearchTree};
use crate::model::AttrKind;
use crate::sim::wire::WireError;

/// Storage key: object instance plus attribute index within the class.
/// Encodes to 10 big-endian bytes so byte order equals `(instance, attr)`
/// order and tree layout is stable across replicas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StoreKey {
    pub instance: u64,
    pub attr: u16,
}

impl StoreKey {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10);
        out.extend_from_slice(&self.instance.to_be_bytes());
        out.extend_from_slice(&self.attr.to_be_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<StoreKey, WireError> {
        if buf.len() != 10 {
            return Err(WireError::BadWidth);
        }
        Ok(StoreKey {
            instance: u64::from_be_bytes(buf[..8].try_into().unwrap()),
            attr: u16::from_be_bytes(buf[8..].try_into().unwrap()),
        })
    }
}

/// A single local mutation. The operation implies the attribute kind.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WriteOp {
    RegisterSet(Vec<u8>),
    RegisterClear,
    CounterAdd(u64),
    MapPut(Vec<u8>, Vec<u8>),
    MapDelete(Vec<u8>),
}

impl WriteOp {
    pub fn kind(&self) -> AttrKind {
        match self {
            WriteOp::RegisterSet(_) | WriteOp::RegisterClear => AttrKind::ScalarBytes,
            WriteOp::CounterAdd(_) => AttrKind::Counter,
            WriteOp::MapPut(..) | WriteOp::MapDelete(_) => AttrKind::MapBytes,
        }
    }
}

pub struct ReplicaStore {
    replica: u16,
    seq: u32,
    entries: BTreeMap<StoreKey, CrdtValue>,
    tree: Option<MerkleSearchTree>,
}

impl ReplicaStore {
    pub fn new(replica: u16) -> ReplicaStore {
        ReplicaStore { replica, seq: 0, entries: BTreeMap::new(), tree: None }
    }

    pub fn replica(&self) -> u16 {
        self.replica
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &StoreKey) -> Option<&CrdtValue> {
        self.entries.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &StoreKey> {
        self.entries.keys()
    }

    /// Apply a local mutation, minting a fresh stamp. Creates the value if
    /// the key is new; rejects an operation whose kind does not match what
    /// is already stored.
    pub fn apply_local_write(
        &mut self,
        now_ms: u64,
        key: StoreKey,
        op: WriteOp,
    ) -> Result<Stamp, KindMismatch> {
        let entry = self
            .entries
            .entry(key)
            .or_insert_with(|| CrdtValue::empty(op.kind()));
        if entry.kind() != op.kind() {
            return Err(KindMismatch { left: entry.kind(), right: op.kind() });
        }
        self.seq += 1;
        let stamp = Stamp { ms: now_ms, replica: self.replica, seq: self.seq };
        match (entry, &op) {
            (CrdtValue::Register(r), WriteOp::RegisterSet(v)) => {
                r.value = Some(v.clone());
                r.stamp = stamp;
            }
            (CrdtValue::Register(r), WriteOp::RegisterClear) => {
                r.value = None;
                r.stamp = stamp;
            }
            (CrdtValue::Counter(c), WriteOp::CounterAdd(by)) => {
                c.increment(self.replica, *by);
            }
            (CrdtValue::Map(m), WriteOp::MapPut(k, v)) => {
                m.put(k.clone(), Some(v.clone()), stamp);
            }
            (CrdtValue::Map(m), WriteOp::MapDelete(k)) => {
                m.put(k.clone(), None, stamp);
            }
            _ => unreachable!("kind checked above"),
        }
        self.tree = None;
        Ok(stamp)
    }

    /// Merge a remote state into this store. Returns whether anything
    /// actually changed, so callers can count effective transfers.
    pub fn merge_remote(
        &mut self,
        key: StoreKey,
        remote: &CrdtValue,
    ) -> Result<bool, KindMismatch> {
        match self.entries.get_mut(&key) {
            Some(entry) => {
                let before = entry.clone();
                entry.merge_from(remote)?;
                if *entry != before {
                    self.tree = None;
                    Ok(true)
                } else {
                    Ok(false)
                }
            }
            None => {
                self.entries.insert(key, remote.clone());
                self.tree = None;
                Ok(true)
            }
        }
    }

    /// Current tree, rebuilt if stale.
    pub fn tree(&mut self) -> &MerkleSearchTree {
        if self.tree.is_none() {
            let leaves: BTreeMap<Vec<u8>, HashVal> = self
                .entries
                .iter()
                .map(|(k, v)| {
                    let vh: HashVal = Sha256::digest(v.canonical_bytes()).into();
                    (k.encode(), vh)
                })
                .collect();
            self.tree = Some(mst_build(&leaves));
        }
        self.tree.as_ref().unwrap()
    }

    pub fn root_hash(&mut self) -> HashVal {
        self.tree().root_hash()
    }

    /// Detached copy of the current tree, for pinning during a sync session.
    pub fn snapshot_tree(&mut self) -> MerkleSearchTree {
        self.tree().clone()
    }
}
