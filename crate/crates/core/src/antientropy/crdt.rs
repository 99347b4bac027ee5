//! Conflict-free replicated value types.
//!
//! Three shapes, one per attribute kind: a last-writer-wins register for
//! scalar bytes, a grow-only counter, and a map of byte keys with
//! per-entry LWW semantics. `merge` is the join of the respective lattice:
//! commutative, associative and idempotent, so replicas can exchange state
//! in any order, any number of times, and still converge.
//!
//! Write stamps order register values: milliseconds first, then replica id,
//! then a per-replica sequence number so two writes from one replica within
//! the same millisecond stay ordered. Deletes write tombstones that keep
//! their stamp forever — a late arrival from before the delete must lose.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::AttrKind;
use crate::sim::wire::{RecordReader, RecordWriter, WireError};

use std::collections::BTreeMap;

/// Total-order write stamp: `(ms, replica, seq)` lexicographic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Stamp {
    pub ms: u64,
    pub replica: u16,
    pub seq: u32,
}

/// Last-writer-wins register. `value: None` is a tombstone.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LwwRegister {
    pub value: Option<Vec<u8>>,
    pub stamp: Stamp,
}

impl LwwRegister {
    fn merge_from(&mut self, other: &LwwRegister) {
        if other.stamp > self.stamp {
            *self = other.clone();
        }
    }
}

/// Grow-only counter: one slot per replica, merge takes per-slot maxima.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GCounter {
    pub slots: BTreeMap<u16, u64>,
}

impl GCounter {
    pub fn increment(&mut self, replica: u16, by: u64) {
        *self.slots.entry(replica).or_insert(0) += by;
    }

    pub fn total(&self) -> u64 {
        self.slots.values().sum()
    }

    fn merge_from(&mut self, other: &GCounter) {
        for (r, v) in &other.slots {
            let slot = self.slots.entry(*r).or_insert(0);
            *slot = (*slot).max(*v);
        }
    }
}

/// Map of byte keys to LWW registers; absent entries merge in, present
/// entries resolve per key. Deleted entries stay as tombstones.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LwwMap {
    pub entries: BTreeMap<Vec<u8>, LwwRegister>,
}

impl LwwMap {
    pub fn put(&mut self, key: Vec<u8>, value: Option<Vec<u8>>, stamp: Stamp) {
        let reg = LwwRegister { value, stamp };
        match self.entries.get_mut(&key) {
            Some(existing) => existing.merge_from(&reg),
            None => {
                self.entries.insert(key, reg);
            }
        }
    }

    /// Live (non-tombstone) value for `key`.
    pub fn get(&self, key: &[u8]) -> Option<&[u8]> {
        self.entries
            .get(key)
            .and_then(|r| r.value.as_deref())
    }

    fn merge_from(&mut self, other: &LwwMap) {
        for (k, reg) in &other.entries {
            match self.entries.get_mut(k) {
                Some(existing) => existing.merge_from(reg),
                None => {
                    self.entries.insert(k.clone(), reg.clone());
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrdtValue {
    Register(LwwRegister),
    Counter(GCounter),
    Map(LwwMap),
}

#[derive(Debug, Error, PartialEq)]
#[error("cannot merge {left:?} with {right:?}")]
pub struct KindMismatch {
    pub left: AttrKind,
    pub right: AttrKind,
}

impl CrdtValue {
    pub fn kind(&self) -> AttrKind {
        match self {
            CrdtValue::Register(_) => AttrKind::ScalarBytes,
            CrdtValue::Counter(_) => AttrKind::Counter,
            CrdtValue::Map(_) => AttrKind::MapBytes,
        }
    }

    /// Fresh empty value of the given kind. Registers start as tombstones
    /// with the zero stamp, which any real write dominates.
    pub fn empty(kind: AttrKind) -> CrdtValue {
        match kind {
            AttrKind::ScalarBytes => CrdtValue::Register(LwwRegister {
                value: None,
                stamp: Stamp { ms: 0, replica: 0, seq: 0 },
            }),
            AttrKind::Counter => CrdtValue::Counter(GCounter::default()),
            AttrKind::MapBytes => CrdtValue::Map(LwwMap::default()),
        }
    }

    pub fn merge_from(&mut self, other: &CrdtValue) -> Result<(), KindMismatch> {
        match (self, other) {
            (CrdtValue::Register(a), CrdtValue::Register(b)) => a.merge_from(b),
            (CrdtValue::Counter(a), CrdtValue::Counter(b)) => a.merge_from(b),
            (CrdtValue::Map(a), CrdtValue::Map(b)) => a.merge_from(b),
            (a, b) => {
                return Err(KindMismatch { left: a.kind(), right: b.kind() });
            }
        }
        Ok(())
    }

    /// True if this state already reflects everything in `other` — merging
    /// `other` in would change nothing. Session failover uses this to check
    /// that a candidate replica holds a session's writes.
    pub fn dominates(&self, other: &CrdtValue) -> bool {
        match (self, other) {
            (CrdtValue::Register(a), CrdtValue::Register(b)) => a.stamp >= b.stamp,
            (CrdtValue::Counter(a), CrdtValue::Counter(b)) => b
                .slots
                .iter()
                .all(|(r, v)| a.slots.get(r).copied().unwrap_or(0) >= *v),
            (CrdtValue::Map(a), CrdtValue::Map(b)) => b.entries.iter().all(|(k, reg)| {
                a.entries
                    .get(k)
                    .map(|mine| mine.stamp >= reg.stamp)
                    .unwrap_or(false)
            }),
            _ => false,
        }
    }

    /// Canonical byte form: deterministic for a given state, independent of
    /// how the state was reached. Used for value hashes and sync transfer.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        match self {
            CrdtValue::Register(r) => {
                let w = RecordWriter::new()
                    .u8(0)
                    .u8(r.value.is_some() as u8)
                    .bytes(r.value.as_deref().unwrap_or(b""))
                    .u64(r.stamp.ms)
                    .u32(r.stamp.replica as u32)
                    .u32(r.stamp.seq);
                w.finish()
            }
            CrdtValue::Counter(c) => {
                let mut w = RecordWriter::new().u8(1).u32(c.slots.len() as u32);
                for (r, v) in &c.slots {
                    w = w.u32(*r as u32).u64(*v);
                }
                w.finish()
            }
            CrdtValue::Map(m) => {
                let mut w = RecordWriter::new().u8(2).u32(m.entries.len() as u32);
                for (k, reg) in &m.entries {
                    w = w
                        .bytes(k)
                        .u8(reg.value.is_some() as u8)
                        .bytes(reg.value.as_deref().unwrap_or(b""))
                        .u64(reg.stamp.ms)
                        .u32(reg.stamp.replica as u32)
                        .u32(reg.stamp.seq);
                }
                w.finish()
            }
        }
    }

    pub fn decode(buf: &[u8]) -> Result<CrdtValue, WireError> {
        let mut r = RecordReader::new(buf);
        match r.u8()? {
            0 => {
                let live = r.u8()? != 0;
                let bytes = r.bytes()?.to_vec();
                let stamp = Stamp {
                    ms: r.u64()?,
                    replica: r.u32()? as u16,
                    seq: r.u32()?,
                };
                Ok(CrdtValue::Register(LwwRegister {
                    value: live.then_some(bytes),
                    stamp,
                }))
            }
            1 => {
                let n = r.u32()?;
                let mut slots = BTreeMap::new();
                for _ in 0..n {
                    let replica = r.u32()? as u16;
                    slots.insert(replica, r.u64()?);
                }
                Ok(CrdtValue::Counter(GCounter { slots }))
            }
            2 => {
                let n = r.u32()?;
                let mut entries = BTreeMap::new();
                for _ in 0..n {
                    let k = r.bytes()?.to_vec();
                    let live = r.u8()? != 0;
                    let bytes = r.bytes()?.to_vec();
                    let stamp = Stamp {
                        ms: r.u64()?,
                        replica: r.u32()? as u16,
                        seq: r.u32()?,
                    };
                    entries.insert(k, LwwRegister { value: live.then_some(bytes), stamp });
                }
                Ok(CrdtValue::Map(LwwMap { entries }))
            }
            t => Err(WireError::BadTag(t)),
        }
    }
}

/// Join of two states of the same kind.
pub fn crdt_merge(a: &CrdtValue, b: &CrdtValue) -> Result<CrdtValue, KindMismatch> {
    let mut out = a.clone();
    out.merge_from(b)?;
    Ok(out)
}
