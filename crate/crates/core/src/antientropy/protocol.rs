//! Pairwise sync protocol between two replicas of a class.
//!
//! Pure protocol logic: endpoints consume decoded messages and emit actions
//! (messages to send, session lifecycle notes); the caller owns transport,
//! timers and message framing on the wire.
//!
//! One round, initiated by the lower-indexed replica of a pair:
//!
//! ```text
//! initiator                                   responder
//! Probe{session, my snapshot time}  ──────▶   pins its tree
//!            ◀──────  Root{session, its snapshot time, root hash}
//! walks pinned trees, fetching unknown remote nodes as needed:
//! Fetch{hash} ──────▶ / ◀────── FetchReply{node}     (repeat)
//! Push{snapshot time, divergent keys, own values}  ──────▶
//!     responder merges, records freshness, answers with its values:
//!            ◀──────  PushReply{values}
//! initiator merges, records freshness                    (round done)
//! ```
//!
//! All merging happens in the push phase, so a round aborted mid-walk (lost
//! message, partition, deadline) leaves both stores untouched and neither
//! side records a successful exchange. An empty diff still completes the
//! push phase: freshness must advance even when nothing diverged.
//!
//! Freshness records use snapshot times, not completion times: after the
//! push merge, each side holds everything the other had *as of the moment
//! that side's tree was pinned*, and that is the time recorded.

use std::collections::BTreeMap;

use super::crdt::CrdtValue;
use super::mst::{DiffWalk, HashVal, MerkleSearchTree, MstNode, WalkStep};
use super::state::ReplicaSyncState;
use super::store::{ReplicaStore, StoreKey};
use crate::sim::wire::{RecordReader, RecordWriter, WireError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AeMsg {
    Probe { session: u64, snapshot_ms: u64 },
    Root { session: u64, snapshot_ms: u64, root: HashVal },
    Fetch { session: u64, hash: HashVal },
    FetchReply { session: u64, node: MstNode },
    Push {
        session: u64,
        snapshot_ms: u64,
        keys: Vec<StoreKey>,
        entries: Vec<(StoreKey, CrdtValue)>,
    },
    PushReply { session: u64, entries: Vec<(StoreKey, CrdtValue)> },
}

impl AeMsg {
    pub fn session(&self) -> u64 {
        match self {
            AeMsg::Probe { session, .. }
            | AeMsg::Root { session, .. }
            | AeMsg::Fetch { session, .. }
            | AeMsg::FetchReply { session, .. }
            | AeMsg::Push { session, .. }
            | AeMsg::PushReply { session, .. } => *session,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            AeMsg::Probe { session, snapshot_ms } => RecordWriter::new()
                .u8(1)
                .u64(*session)
                .u64(*snapshot_ms)
                .finish(),
            AeMsg::Root { session, snapshot_ms, root } => RecordWriter::new()
                .u8(2)
                .u64(*session)
                .u64(*snapshot_ms)
                .bytes(root)
                .finish(),
            AeMsg::Fetch { session, hash } => RecordWriter::new()
                .u8(3)
                .u64(*session)
                .bytes(hash)
                .finish(),
            AeMsg::FetchReply { session, node } => RecordWriter::new()
                .u8(4)
                .u64(*session)
                .bytes(&node.encode())
                .finish(),
            AeMsg::Push { session, snapshot_ms, keys, entries } => {
                let mut w = RecordWriter::new()
                    .u8(5)
                    .u64(*session)
                    .u64(*snapshot_ms)
                    .u32(keys.len() as u32);
                for k in keys {
                    w = w.bytes(&k.encode());
                }
                w = w.u32(entries.len() as u32);
                for (k, v) in entries {
                    w = w.bytes(&k.encode()).bytes(&v.canonical_bytes());
                }
                w.finish()
            }
            AeMsg::PushReply { session, entries } => {
                let mut w = RecordWriter::new().u8(6).u64(*session).u32(entries.len() as u32);
                for (k, v) in entries {
                    w = w.bytes(&k.encode()).bytes(&v.canonical_bytes());
                }
                w.finish()
            }
        }
    }

    pub fn decode(buf: &[u8]) -> Result<AeMsg, WireError> {
        let mut r = RecordReader::new(buf);
        let tag = r.u8()?;
        let session = r.u64()?;
        match tag {
            1 => Ok(AeMsg::Probe { session, snapshot_ms: r.u64()? }),
            2 => {
                let snapshot_ms = r.u64()?;
                let root: HashVal =
                    r.bytes()?.try_into().map_err(|_| WireError::BadWidth)?;
                Ok(AeMsg::Root { session, snapshot_ms, root })
            }
            3 => {
                let hash: HashVal =
                    r.bytes()?.try_into().map_err(|_| WireError::BadWidth)?;
                Ok(AeMsg::Fetch { session, hash })
            }
            4 => {
                let node = MstNode::decode(r.bytes()?)?;
                Ok(AeMsg::FetchReply { session, node })
            }
            5 => {
                let snapshot_ms = r.u64()?;
                let nk = r.u32()? as usize;
                let mut keys = Vec::with_capacity(nk);
                for _ in 0..nk {
                    keys.push(StoreKey::decode(r.bytes()?)?);
                }
                let entries = decode_entries(&mut r)?;
                Ok(AeMsg::Push { session, snapshot_ms, keys, entries })
            }
            6 => {
                let entries = decode_entries(&mut r)?;
                Ok(AeMsg::PushReply { session, entries })
            }
            t => Err(WireError::BadTag(t)),
        }
    }
}

fn decode_entries(r: &mut RecordReader) -> Result<Vec<(StoreKey, CrdtValue)>, WireError> {
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let key = StoreKey::decode(r.bytes()?)?;
        let value = CrdtValue::decode(r.bytes()?)?;
        out.push((key, value));
    }
    Ok(out)
}

/// What the caller must do after handing a message to the endpoint.
#[derive(Clone, Debug, PartialEq)]
pub enum AeAction {
    Send { to: u16, msg: AeMsg },
    /// A responder session opened; the caller should arm an abort deadline.
    Opened { session: u64 },
    /// A round with `peer` finished on this side; freshness was recorded.
    RoundComplete { peer: u16 },
}

struct InitiatorSession {
    peer: u16,
    /// When our own tree was pinned — what the peer will record for us.
    snapshot_ms: u64,
    tree: MerkleSearchTree,
    /// When the peer's tree was pinned — what we record on completion.
    peer_snapshot_ms: u64,
    /// `Some` while walking; `None` once the push has been sent.
    walk: Option<DiffWalk>,
}

struct ResponderSession {
    peer: u16,
    tree: MerkleSearchTree,
}

/// Sync endpoint for one replica of one class. Holds in-flight sessions on
/// both sides; the store and freshness state are passed per call since the
/// surrounding runtime owns them.
pub struct AeEndpoint {
    replica: u16,
    next_session: u32,
    initiator: BTreeMap<u64, InitiatorSession>,
    responder: BTreeMap<u64, ResponderSession>,
}

impl AeEndpoint {
    pub fn new(replica: u16) -> AeEndpoint {
        AeEndpoint {
            replica,
            next_session: 0,
            initiator: BTreeMap::new(),
            responder: BTreeMap::new(),
        }
    }

    pub fn active_sessions(&self) -> usize {
        self.initiator.len() + self.responder.len()
    }

    /// Begin a round with `peer`: pin the local tree and produce the probe.
    /// A stale unfinished round with the same peer is discarded first.
    pub fn start_round(
        &mut self,
        now_ms: u64,
        peer: u16,
        store: &mut ReplicaStore,
    ) -> (u64, AeMsg) {
        self.initiator.retain(|_, s| s.peer != peer);
        self.next_session += 1;
        let session = (self.replica as u64) << 32 | self.next_session as u64;
        self.initiator.insert(
            session,
            InitiatorSession {
                peer,
                snapshot_ms: now_ms,
                tree: store.snapshot_tree(),
                peer_snapshot_ms: 0,
                walk: None,
            },
        );
        (session, AeMsg::Probe { session, snapshot_ms: now_ms })
    }

    /// Abort a session if it is still running. Nothing to undo: stores only
    /// change in the push phase, which also ends the session.
    pub fn on_deadline(&mut self, session: u64) -> bool {
        let a = self.initiator.remove(&session).is_some();
        let b = self.responder.remove(&session).is_some();
        a || b
    }

    pub fn on_message(
        &mut self,
        now_ms: u64,
        from: u16,
        msg: AeMsg,
        store: &mut ReplicaStore,
        sync: &mut ReplicaSyncState,
    ) -> Vec<AeAction> {
        match msg {
            AeMsg::Probe { session, .. } => {
                let tree = store.snapshot_tree();
                let root = tree.root_hash();
                self.responder.insert(session, ResponderSession { peer: from, tree });
                vec![
                    AeAction::Opened { session },
                    AeAction::Send {
                        to: from,
                        msg: AeMsg::Root { session, snapshot_ms: now_ms, root },
                    },
                ]
            }
            AeMsg::Root { session, snapshot_ms, root } => {
                let Some(sess) = self.initiator.get_mut(&session) else {
                    return vec![];
                };
                if sess.peer != from || sess.walk.is_some() {
                    return vec![];
                }
                sess.peer_snapshot_ms = snapshot_ms;
                sess.walk = Some(DiffWalk::new(&sess.tree, root));
                self.drive_walk(session, store)
            }
            AeMsg::Fetch { session, hash } => {
                let Some(sess) = self.responder.get(&session) else {
                    return vec![];
                };
                if sess.peer != from {
                    return vec![];
                }
                match sess.tree.node(&hash) {
                    Some(node) => vec![AeAction::Send {
                        to: from,
                        msg: AeMsg::FetchReply { session, node: node.clone() },
                    }],
                    None => vec![],
                }
            }
            AeMsg::FetchReply { session, node } => {
                let Some(sess) = self.initiator.get_mut(&session) else {
                    return vec![];
                };
                if sess.peer != from {
                    return vec![];
                }
                let Some(walk) = sess.walk.as_mut() else {
                    return vec![];
                };
                if walk.awaiting() != Some(node.hash()) {
                    return vec![];
                }
                walk.supply_remote(node);
                self.drive_walk(session, store)
            }
            AeMsg::Push { session, snapshot_ms, keys, entries } => {
                // Self-contained: merge, answer with our values for every
                // divergent key, and record the initiator's snapshot time.
                self.responder.remove(&session);
                for (key, value) in &entries {
                    let _ = store.merge_remote(*key, value);
                }
                let reply: Vec<(StoreKey, CrdtValue)> = keys
                    .iter()
                    .filter_map(|k| store.get(k).map(|v| (*k, v.clone())))
                    .collect();
                sync.record_sync(from, snapshot_ms);
                let _ = now_ms;
                vec![
                    AeAction::Send {
                        to: from,
                        msg: AeMsg::PushReply { session, entries: reply },
                    },
                    AeAction::RoundComplete { peer: from },
                ]
            }
            AeMsg::PushReply { session, entries } => {
                let Some(sess) = self.initiator.remove(&session) else {
                    return vec![];
                };
                if sess.peer != from {
                    return vec![];
                }
                for (key, value) in &entries {
                    let _ = store.merge_remote(*key, value);
                }
                sync.record_sync(from, sess.peer_snapshot_ms);
                vec![AeAction::RoundComplete { peer: from }]
            }
        }
    }

    /// Advance the initiator walk: either request the next remote node or,
    /// when the diff is complete, send the push with our side of the data.
    fn drive_walk(&mut self, session: u64, store: &mut ReplicaStore) -> Vec<AeAction> {
        let sess = self.initiator.get_mut(&session).expect("session exists");
        let walk = sess.walk.as_mut().expect("walk in progress");
        match walk.step(&sess.tree) {
            WalkStep::NeedRemote(hash) => vec![AeAction::Send {
                to: sess.peer,
                msg: AeMsg::Fetch { session, hash },
            }],
            WalkStep::Done(divergent) => {
                sess.walk = None;
                let mut keys = Vec::with_capacity(divergent.len());
                let mut entries = Vec::new();
                for kb in &divergent {
                    let Ok(key) = StoreKey::decode(kb) else { continue };
                    keys.push(key);
                    if let Some(v) = store.get(&key) {
                        entries.push((key, v.clone()));
                    }
                }
                vec![AeAction::Send {
                    to: sess.peer,
                    msg: AeMsg::Push {
                        session,
                        snapshot_ms: sess.snapshot_ms,
                        keys,
                        entries,
                    },
                }]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::antientropy::store::WriteOp;

    struct Peer {
        ep: AeEndpoint,
        store: ReplicaStore,
        sync: ReplicaSyncState,
    }

    impl Peer {
        fn new(replica: u16, delta_ms: u64) -> Peer {
            Peer {
                ep: AeEndpoint::new(replica),
                store: ReplicaStore::new(replica),
                sync: ReplicaSyncState::new(replica, delta_ms),
            }
        }
    }

    fn k(instance: u64, attr: u16) -> StoreKey {
        StoreKey { instance, attr }
    }

    struct RoundStats {
        fetches: usize,
        completions: Vec<u16>,
    }

    /// Run a full round from `a` to `b`, encoding and decoding every
    /// message, advancing the clock 10 ms per hop. Returns protocol stats.
    fn run_round(a: &mut Peer, b: &mut Peer, start_ms: u64) -> RoundStats {
        let a_id = a.ep.replica;
        let (_, probe) = a.ep.start_round(start_ms, b.ep.replica, &mut a.store);
        let mut now = start_ms;
        // (destined for a?, sender, encoded message)
        let mut queue = vec![(false, a_id, probe.encode())];
        let mut stats = RoundStats { fetches: 0, completions: Vec::new() };
        while let Some((to_a, from, bytes)) = queue.pop() {
            now += 10;
            let msg = AeMsg::decode(&bytes).expect("wire round trip");
            if matches!(msg, AeMsg::Fetch { .. }) {
                stats.fetches += 1;
            }
            let dst = if to_a { &mut *a } else { &mut *b };
            let dst_id = dst.ep.replica;
            let actions = dst.ep.on_message(now, from, msg, &mut dst.store, &mut dst.sync);
            for act in actions {
                match act {
                    AeAction::Send { to, msg } => {
                        queue.push((to == a_id, dst_id, msg.encode()));
                    }
                    AeAction::RoundComplete { .. } => stats.completions.push(dst_id),
                    AeAction::Opened { .. } => {}
                }
            }
        }
        stats
    }

    fn store_contents(store: &ReplicaStore) -> Vec<(StoreKey, CrdtValue)> {
        store
            .keys()
            .map(|key| (*key, store.get(key).unwrap().clone()))
            .collect()
    }

    #[test]
    fn divergent_stores_converge_in_one_round() {
        let mut a = Peer::new(0, 10_000);
        let mut b = Peer::new(1, 10_000);
        a.store
            .apply_local_write(100, k(1, 0), WriteOp::RegisterSet(b"from-a".to_vec()))
            .unwrap();
        a.store.apply_local_write(110, k(2, 1), WriteOp::CounterAdd(5)).unwrap();
        b.store
            .apply_local_write(200, k(1, 0), WriteOp::RegisterSet(b"from-b".to_vec()))
            .unwrap();
        b.store
            .apply_local_write(210, k(3, 0), WriteOp::MapPut(b"f".to_vec(), b"v".to_vec()))
            .unwrap();

        let stats = run_round(&mut a, &mut b, 1_000);
        assert_eq!(a.store.root_hash(), b.store.root_hash());
        assert_eq!(store_contents(&a.store), store_contents(&b.store));
        // Newer write wins the shared register.
        match a.store.get(&k(1, 0)).unwrap() {
            CrdtValue::Register(r) => assert_eq!(r.value.as_deref(), Some(&b"from-b"[..])),
            _ => unreachable!(),
        }
        assert_eq!(stats.completions.len(), 2, "both sides complete");
        assert_eq!(a.ep.active_sessions(), 0);
        assert_eq!(b.ep.active_sessions(), 0);
    }

    #[test]
    fn freshness_records_snapshot_times_not_completion() {
        let mut a = Peer::new(0, 10_000);
        let mut b = Peer::new(1, 10_000);
        a.store
            .apply_local_write(1, k(1, 0), WriteOp::RegisterSet(b"x".to_vec()))
            .unwrap();
        run_round(&mut a, &mut b, 1_000);
        // b records a's probe snapshot (1000); a records b's tree pin time,
        // which is one hop later (1010). Completion happens later still.
        assert_eq!(b.sync.worst_staleness(1_000), Some((0, 0)));
        assert_eq!(a.sync.worst_staleness(1_010), Some((1, 0)));
    }

    #[test]
    fn identical_stores_still_complete_the_round() {
        let mut a = Peer::new(0, 10_000);
        let mut b = Peer::new(1, 10_000);
        a.store
            .apply_local_write(5, k(9, 0), WriteOp::RegisterSet(b"same".to_vec()))
            .unwrap();
        // Copy the state across so both trees are truly identical.
        let va = a.store.get(&k(9, 0)).unwrap().clone();
        b.store.merge_remote(k(9, 0), &va).unwrap();
        let before_a = a.store.root_hash();
        assert_eq!(before_a, b.store.root_hash());

        let stats = run_round(&mut a, &mut b, 2_000);
        assert_eq!(stats.fetches, 0, "equal roots need no node fetches");
        assert_eq!(stats.completions.len(), 2);
        assert!(b.sync.gate(2_000).is_allow());
        assert!(a.sync.gate(2_020).is_allow());
    }

    #[test]
    fn large_divergence_walks_with_fetches_and_converges() {
        let mut a = Peer::new(0, 10_000);
        let mut b = Peer::new(1, 10_000);
        for i in 0..400u64 {
            a.store
                .apply_local_write(i, k(i, 0), WriteOp::RegisterSet(vec![1, i as u8]))
                .unwrap();
            if i % 2 == 0 {
                b.store
                    .apply_local_write(i + 1, k(i, 0), WriteOp::RegisterSet(vec![2, i as u8]))
                    .unwrap();
            }
        }
        let stats = run_round(&mut a, &mut b, 3_000);
        assert!(stats.fetches > 0, "deep divergence must fetch nodes");
        assert_eq!(a.store.root_hash(), b.store.root_hash());
        assert_eq!(store_contents(&a.store), store_contents(&b.store));
    }

    #[test]
    fn abort_mid_walk_leaves_both_sides_untouched() {
        let mut a = Peer::new(0, 10_000);
        let mut b = Peer::new(1, 10_000);
        for i in 0..100u64 {
            a.store
                .apply_local_write(i, k(i, 0), WriteOp::RegisterSet(vec![1]))
                .unwrap();
        }
        b.store
            .apply_local_write(7, k(7, 0), WriteOp::RegisterSet(vec![2]))
            .unwrap();
        let a_before = store_contents(&a.store);
        let b_before = store_contents(&b.store);

        let (session, probe) = a.ep.start_round(1_000, 1, &mut a.store);
        let acts = b.ep.on_message(1_010, 0, probe, &mut b.store, &mut b.sync);
        // Deliver Root, stop as soon as the walk asks for a remote node.
        let root_msg = acts
            .iter()
            .find_map(|act| match act {
                AeAction::Send { msg, .. } => Some(msg.clone()),
                _ => None,
            })
            .unwrap();
        let acts = a.ep.on_message(1_020, 1, root_msg, &mut a.store, &mut a.sync);
        assert!(matches!(
            acts.as_slice(),
            [AeAction::Send { msg: AeMsg::Fetch { .. }, .. }]
        ));

        assert!(a.ep.on_deadline(session), "initiator side aborts");
        assert!(b.ep.on_deadline(session), "responder side aborts");
        assert_eq!(store_contents(&a.store), a_before);
        assert_eq!(store_contents(&b.store), b_before);
        assert_eq!(a.sync.worst_staleness(9_999), None, "no success recorded");
        assert_eq!(b.sync.worst_staleness(9_999), None);

        // A late reply for the dead session is ignored.
        let AeMsg::Fetch { hash, .. } = (match &acts[0] {
            AeAction::Send { msg, .. } => msg.clone(),
            _ => unreachable!(),
        }) else {
            unreachable!()
        };
        let _ = hash;
        assert_eq!(a.ep.active_sessions(), 0);
        assert_eq!(b.ep.active_sessions(), 0);
    }

    #[test]
    fn message_encoding_round_trips() {
        let node = MstNode {
            layer: 2,
            items: vec![(vec![1, 2, 3], [7u8; 32])],
            children: vec![Some([9u8; 32]), None],
        };
        let value = CrdtValue::empty(crate::model::AttrKind::Counter);
        let msgs = [
            AeMsg::Probe { session: 42, snapshot_ms: 1_000 },
            AeMsg::Root { session: 42, snapshot_ms: 2_000, root: [3u8; 32] },
            AeMsg::Fetch { session: 42, hash: [5u8; 32] },
            AeMsg::FetchReply { session: 42, node },
            AeMsg::Push {
                session: 42,
                snapshot_ms: 1_000,
                keys: vec![k(1, 0), k(2, 3)],
                entries: vec![(k(1, 0), value.clone())],
            },
            AeMsg::PushReply { session: 42, entries: vec![(k(2, 3), value)] },
        ];
        for msg in msgs {
            assert_eq!(AeMsg::decode(&msg.encode()).unwrap(), msg);
            assert_eq!(msg.session(), 42);
        }
        assert!(AeMsg::decode(&[99, 0, 0, 0, 0]).is_err());
    }

    #[test]
    fn restarting_a_round_discards_the_stale_one() {
        let mut a = Peer::new(0, 10_000);
        let mut b = Peer::new(1, 10_000);
        let (s1, _) = a.ep.start_round(1_000, 1, &mut a.store);
        let (s2, probe2) = a.ep.start_round(2_000, 1, &mut a.store);
        assert_ne!(s1, s2);
        assert_eq!(a.ep.active_sessions(), 1, "old session dropped");

        // The fresh round still completes normally.
        let mut now = 2_000;
        let mut queue = vec![(false, 0u16, probe2.encode())];
        let mut completions = 0;
        while let Some((to_a, from, bytes)) = queue.pop() {
            now += 10;
            let msg = AeMsg::decode(&bytes).unwrap();
            let dst: &mut Peer = if to_a { &mut a } else { &mut b };
            for act in dst.ep.on_message(now, from, msg, &mut dst.store, &mut dst.sync) {
                match act {
                    AeAction::Send { to, msg } => queue.push((to == 0, dst.ep.replica, msg.encode())),
                    AeAction::RoundComplete { .. } => completions += 1,
                    AeAction::Opened { .. } => {}
                }
            }
        }
        assert_eq!(completions, 2);
    }
}
