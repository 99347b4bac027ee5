//! Read-your-write sessions over weakly consistent replicas.
//!
//! A session pins a client to one replica — co-located with the client's
//! gateway when possible, else the nearest reachable one — and every read
//! and write of the session goes there, which trivially makes writes
//! visible to later reads. The interesting part is failover: when the
//! pinned replica dies or falls behind a partition, the session may move,
//! but only to a replica that already *holds* everything this session has
//! written. The session tracks the required version per key; a candidate
//! qualifies when its stored state dominates every one of them. If no
//! reachable replica qualifies the session reports unavailability instead
//! of quietly breaking its guarantee.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::antientropy::{crdt_merge, CrdtValue, ReplicaStore, StoreKey};
use crate::sim::DcIndex;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum SessionError {
    /// No live replica of the class is reachable at all.
    #[error("no replica of the class is reachable")]
    NoReplicaAvailable,
    /// The pinned replica cannot be reached right now.
    #[error("pinned replica unreachable")]
    ReplicaUnreachable,
    /// Reachable replicas exist, but none holds this session's writes.
    #[error("no reachable replica holds this session's writes")]
    NoQualifiedReplica,
    #[error("unknown session")]
    UnknownSession,
}

#[derive(Debug)]
pub struct Session {
    pub client_dc: DcIndex,
    pub pinned: DcIndex,
    /// Minimum state a replica must hold to serve this session, per key.
    required: BTreeMap<StoreKey, CrdtValue>,
    /// How often this session had to move replica.
    pub repins: u32,
}

impl Session {
    /// Does `store` hold everything this session has written?
    pub fn qualified(&self, store: &ReplicaStore) -> bool {
        self.required.iter().all(|(key, need)| {
            store.get(key).map(|have| have.dominates(need)).unwrap_or(false)
        })
    }
}

#[derive(Default)]
pub struct SessionManager {
    sessions: BTreeMap<u64, Session>,
    next_id: u64,
}

impl SessionManager {
    pub fn new() -> SessionManager {
        SessionManager::default()
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn get(&self, token: u64) -> Option<&Session> {
        self.sessions.get(&token)
    }

    /// Open a session for a client at `client_dc`. Pins the co-located
    /// replica when there is one, else the nearest reachable replica by
    /// `distance` (ties to the lower index).
    pub fn open(
        &mut self,
        client_dc: DcIndex,
        replicas: &[DcIndex],
        reachable: impl Fn(DcIndex) -> bool,
        distance: impl Fn(DcIndex) -> u64,
    ) -> Result<u64, SessionError> {
        let pinned = Self::pick(client_dc, replicas, &reachable, &distance)
            .ok_or(SessionError::NoReplicaAvailable)?;
        self.next_id += 1;
        let token = self.next_id;
        self.sessions.insert(
            token,
            Session { client_dc, pinned, required: BTreeMap::new(), repins: 0 },
        );
        Ok(token)
    }

    pub fn close(&mut self, token: u64) {
        self.sessions.remove(&token);
    }

    /// Replica this session's operations must go to.
    pub fn replica_for(&self, token: u64) -> Result<DcIndex, SessionError> {
        self.sessions
            .get(&token)
            .map(|s| s.pinned)
            .ok_or(SessionError::UnknownSession)
    }

    /// Record the state a write left behind; later failover must preserve
    /// it. `value_after` is the stored value after applying the write.
    pub fn record_write(&mut self, token: u64, key: StoreKey, value_after: &CrdtValue) {
        let Some(session) = self.sessions.get_mut(&token) else { return };
        match session.required.get_mut(&key) {
            Some(need) => {
                // Accumulate monotonically; merging can only raise the bar.
                if let Ok(merged) = crdt_merge(need, value_after) {
                    *need = merged;
                }
            }
            None => {
                session.required.insert(key, value_after.clone());
            }
        }
    }

    /// Move the session off an unreachable pin. `candidates` are the live
    /// replicas with their stores; only one that dominates every recorded
    /// write qualifies. Preference order matches [`SessionManager::open`].
    pub fn repin(
        &mut self,
        token: u64,
        candidates: &[(DcIndex, &ReplicaStore)],
        reachable: impl Fn(DcIndex) -> bool,
        distance: impl Fn(DcIndex) -> u64,
    ) -> Result<DcIndex, SessionError> {
        let session = self.sessions.get_mut(&token).ok_or(SessionError::UnknownSession)?;
        let usable: Vec<DcIndex> = candidates
            .iter()
            .filter(|(dc, _)| reachable(*dc))
            .map(|(dc, _)| *dc)
            .collect();
        if usable.is_empty() {
            return Err(SessionError::NoReplicaAvailable);
        }
        let qualified: Vec<DcIndex> = candidates
            .iter()
            .filter(|(dc, store)| reachable(*dc) && session.qualified(store))
            .map(|(dc, _)| *dc)
            .collect();
        let pick = Self::pick(session.client_dc, &qualified, &reachable, &distance)
            .ok_or(SessionError::NoQualifiedReplica)?;
        if pick != session.pinned {
            session.pinned = pick;
            session.repins += 1;
        }
        Ok(pick)
    }

    fn pick(
        client_dc: DcIndex,
        replicas: &[DcIndex],
        reachable: &impl Fn(DcIndex) -> bool,
        distance: &impl Fn(DcIndex) -> u64,
    ) -> Option<DcIndex> {
        if replicas.contains(&client_dc) && reachable(client_dc) {
            return Some(client_dc);
        }
        replicas
            .iter()
            .filter(|dc| reachable(**dc))
            .min_by_key(|dc| (distance(**dc), dc.0))
            .copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::antientropy::WriteOp;

    fn k(instance: u64, attr: u16) -> StoreKey {
        StoreKey { instance, attr }
    }

    #[test]
    fn open_prefers_colocated_then_nearest() {
        let mut mgr = SessionManager::new();
        let replicas = [DcIndex(0), DcIndex(2), DcIndex(4)];
        let all_up = |_| true;
        let dist = |dc: DcIndex| dc.0 as u64 * 10;

        let t = mgr.open(DcIndex(2), &replicas, all_up, dist).unwrap();
        assert_eq!(mgr.replica_for(t).unwrap(), DcIndex(2));

        // Client not co-located: nearest by distance.
        let t = mgr.open(DcIndex(1), &replicas, all_up, dist).unwrap();
        assert_eq!(mgr.replica_for(t).unwrap(), DcIndex(0));

        // Co-located but down: falls to nearest reachable.
        let t = mgr
            .open(DcIndex(2), &replicas, |dc| dc != DcIndex(2) && dc != DcIndex(0), dist)
            .unwrap();
        assert_eq!(mgr.replica_for(t).unwrap(), DcIndex(4));

        assert_eq!(
            mgr.open(DcIndex(2), &replicas, |_| false, dist),
            Err(SessionError::NoReplicaAvailable)
        );
    }

    #[test]
    fn failover_requires_the_sessions_writes() {
        let mut mgr = SessionManager::new();
        let mut pinned_store = ReplicaStore::new(0);
        let mut fresh = ReplicaStore::new(1);
        let mut synced = ReplicaStore::new(2);

        let t = mgr
            .open(DcIndex(0), &[DcIndex(0), DcIndex(1), DcIndex(2)], |_| true, |_| 0)
            .unwrap();
        pinned_store
            .apply_local_write(100, k(7, 0), WriteOp::RegisterSet(b"mine".to_vec()))
            .unwrap();
        mgr.record_write(t, k(7, 0), pinned_store.get(&k(7, 0)).unwrap());

        // One candidate synced with the pinned replica, one did not.
        synced
            .merge_remote(k(7, 0), pinned_store.get(&k(7, 0)).unwrap())
            .unwrap();

        // Pin (dc 0) dies: only the synced replica qualifies.
        let picked = mgr
            .repin(
                t,
                &[(DcIndex(1), &fresh), (DcIndex(2), &synced)],
                |_| true,
                |dc| dc.0 as u64,
            )
            .unwrap();
        assert_eq!(picked, DcIndex(2));
        assert_eq!(mgr.get(t).unwrap().repins, 1);

        // With only the stale replica on offer the session refuses to move.
        mgr.record_write(t, k(7, 0), synced.get(&k(7, 0)).unwrap());
        let err = mgr
            .repin(t, &[(DcIndex(1), &fresh)], |_| true, |dc| dc.0 as u64)
            .unwrap_err();
        assert_eq!(err, SessionError::NoQualifiedReplica);
        // ... and stays where it was.
        assert_eq!(mgr.replica_for(t).unwrap(), DcIndex(2));

        let _ = fresh
            .apply_local_write(1, k(9, 9), WriteOp::CounterAdd(1))
            .unwrap();
    }

    #[test]
    fn counter_writes_qualify_by_slot_inclusion() {
        let mut mgr = SessionManager::new();
        let mut pinned = ReplicaStore::new(0);
        let mut behind = ReplicaStore::new(1);
        let mut ahead = ReplicaStore::new(2);

        let t = mgr
            .open(DcIndex(0), &[DcIndex(0), DcIndex(1), DcIndex(2)], |_| true, |_| 0)
            .unwrap();
        for ms in 0..3 {
            pinned.apply_local_write(ms, k(1, 0), WriteOp::CounterAdd(2)).unwrap();
        }
        mgr.record_write(t, k(1, 0), pinned.get(&k(1, 0)).unwrap());

        // `behind` saw an old sync (partial count), `ahead` saw it all plus
        // its own increments.
        let mut partial = pinned.get(&k(1, 0)).unwrap().clone();
        if let CrdtValue::Counter(c) = &mut partial {
            c.slots.insert(0, 2);
        }
        behind.merge_remote(k(1, 0), &partial).unwrap();
        ahead.merge_remote(k(1, 0), pinned.get(&k(1, 0)).unwrap()).unwrap();
        ahead.apply_local_write(50, k(1, 0), WriteOp::CounterAdd(10)).unwrap();

        let picked = mgr
            .repin(
                t,
                &[(DcIndex(1), &behind), (DcIndex(2), &ahead)],
                |_| true,
                |dc| dc.0 as u64,
            )
            .unwrap();
        assert_eq!(picked, DcIndex(2), "only the replica with the full count qualifies");
    }

    #[test]
    fn merged_requirements_accumulate_across_keys() {
        let mut mgr = SessionManager::new();
        let mut store = ReplicaStore::new(0);
        let t = mgr.open(DcIndex(0), &[DcIndex(0)], |_| true, |_| 0).unwrap();

        store.apply_local_write(1, k(1, 0), WriteOp::RegisterSet(b"a".to_vec())).unwrap();
        mgr.record_write(t, k(1, 0), store.get(&k(1, 0)).unwrap());
        store.apply_local_write(2, k(2, 0), WriteOp::MapPut(b"x".to_vec(), b"1".to_vec())).unwrap();
        mgr.record_write(t, k(2, 0), store.get(&k(2, 0)).unwrap());

        assert!(mgr.get(t).unwrap().qualified(&store));
        let empty = ReplicaStore::new(9);
        assert!(!mgr.get(t).unwrap().qualified(&empty));
    }
}
