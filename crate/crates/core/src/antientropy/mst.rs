//! Merkle search tree: a content-addressed, history-independent index of a
//! replica's key space.
//!
//! Every key hashes to a *layer* — the count of leading zero hex digits of
//! its SHA-256 — and the tree takes the shape of a B-tree whose node levels
//! are dictated by those layers alone. Two replicas holding the same entries
//! therefore build byte-identical trees no matter what order the entries
//! arrived in, and equal subtree hashes prove equal contents.
//!
//! Reconciliation ([`DiffWalk`]) merge-walks two trees as ordered streams,
//! skipping subtree pairs with matching hashes. With base-16 layers the
//! expected number of remote nodes fetched to locate a handful of divergent
//! keys is proportional to log16 of the tree size.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::sim::wire::{RecordReader, RecordWriter, WireError};

pub type Key = Vec<u8>;
pub type HashVal = [u8; 32];

/// Root hash of the empty tree.
pub const EMPTY_ROOT: HashVal = [0u8; 32];

/// Layer of a key: number of leading zero nibbles of `SHA-256(key)`.
pub fn layer_of(key: &[u8]) -> u8 {
    let digest = Sha256::digest(key);
    let mut n = 0u8;
    for byte in digest.iter() {
        if byte >> 4 != 0 {
            return n;
        }
        n += 1;
        if byte & 0x0f != 0 {
            return n;
        }
        n += 1;
    }
    n
}

/// One tree node: items living at `layer`, with `items.len() + 1` child
/// slots for the key gaps around them. `None` children are empty gaps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MstNode {
    pub layer: u8,
    pub items: Vec<(Key, HashVal)>,
    pub children: Vec<Option<HashVal>>,
}

impl MstNode {
    /// Canonical encoding; the node's identity is the SHA-256 of this.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = RecordWriter::new()
            .u8(self.layer)
            .u32(self.items.len() as u32);
        for (k, vh) in &self.items {
            w = w.bytes(k).bytes(vh);
        }
        for c in &self.children {
            w = match c {
                Some(h) => w.bytes(h),
                None => w.bytes(b""),
            };
        }
        w.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<MstNode, WireError> {
        let mut r = RecordReader::new(buf);
        let layer = r.u8()?;
        let n = r.u32()? as usize;
        let mut items = Vec::with_capacity(n);
        for _ in 0..n {
            let k = r.bytes()?.to_vec();
            let vh: HashVal = r
                .bytes()?
                .try_into()
                .map_err(|_| WireError::BadWidth)?;
            items.push((k, vh));
        }
        let mut children = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            let b = r.bytes()?;
            children.push(if b.is_empty() {
                None
            } else {
                Some(b.try_into().map_err(|_| WireError::BadWidth)?)
            });
        }
        Ok(MstNode { layer, items, children })
    }

    pub fn hash(&self) -> HashVal {
        Sha256::digest(self.encode()).into()
    }
}

/// A built tree: root hash plus the node table. Value hashes are opaque to
/// the tree; the store derives them from canonical CRDT bytes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MerkleSearchTree {
    root: Option<HashVal>,
    nodes: BTreeMap<HashVal, MstNode>,
}

impl MerkleSearchTree {
    pub fn root_hash(&self) -> HashVal {
        self.root.unwrap_or(EMPTY_ROOT)
    }

    pub fn node(&self, hash: &HashVal) -> Option<&MstNode> {
        self.nodes.get(hash)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.root.is_none()
    }
}

/// Build a tree over the given entries (key → value hash). Deterministic:
/// the same entry set yields the same root regardless of history.
pub fn mst_build(entries: &BTreeMap<Key, HashVal>) -> MerkleSearchTree {
    let items: Vec<(&Key, &HashVal, u8)> = entries
        .iter()
        .map(|(k, v)| (k, v, layer_of(k)))
        .collect();
    let mut nodes = BTreeMap::new();
    let root = build_range(&items, &mut nodes);
    MerkleSearchTree { root, nodes }
}

fn build_range(
    slice: &[(&Key, &HashVal, u8)],
    nodes: &mut BTreeMap<HashVal, MstNode>,
) -> Option<HashVal> {
    if slice.is_empty() {
        return None;
    }
    let top = slice.iter().map(|(_, _, l)| *l).max().unwrap();
    let mut items = Vec::new();
    let mut children = Vec::new();
    let mut gap_start = 0usize;
    for (i, (k, vh, l)) in slice.iter().enumerate() {
        if *l == top {
            children.push(build_range(&slice[gap_start..i], nodes));
            items.push(((*k).clone(), **vh));
            gap_start = i + 1;
        }
    }
    children.push(build_range(&slice[gap_start..], nodes));
    let node = MstNode { layer: top, items, children };
    let h = node.hash();
    nodes.insert(h, node);
    Some(h)
}

#[derive(Debug, Error, PartialEq)]
#[error("peer unreachable while fetching tree node")]
pub struct FetchFailed;

/// What the diff walk needs next.
#[derive(Debug, PartialEq)]
pub enum WalkStep {
    /// Fetch this node from the remote replica and feed it back in.
    NeedRemote(HashVal),
    /// Walk complete; these keys differ (value mismatch or one-sided).
    Done(BTreeSet<Key>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum El {
    Item(Key, HashVal),
    Tree(HashVal),
}

/// Incremental diff of a local tree against a remote root. The walk runs
/// until it needs a remote node, at which point the caller fetches it (a
/// network round trip in the sync protocol) and resumes. Local and remote
/// streams stay in key order; subtree pairs with equal hashes are skipped
/// without expansion, which is where the logarithmic fetch bound comes from.
pub struct DiffWalk {
    local_q: VecDeque<El>,
    remote_q: VecDeque<El>,
    out: BTreeSet<Key>,
    pending: Option<HashVal>,
    fetches: u64,
}

impl DiffWalk {
    pub fn new(local: &MerkleSearchTree, remote_root: HashVal) -> DiffWalk {
        let mut local_q = VecDeque::new();
        if !local.is_empty() {
            local_q.push_back(El::Tree(local.root_hash()));
        }
        let mut remote_q = VecDeque::new();
        if remote_root != EMPTY_ROOT {
            remote_q.push_back(El::Tree(remote_root));
        }
        DiffWalk { local_q, remote_q, out: BTreeSet::new(), pending: None, fetches: 0 }
    }

    /// Remote nodes fetched so far.
    pub fn fetch_count(&self) -> u64 {
        self.fetches
    }

    /// Hash of the node the walk is waiting for, if a fetch is outstanding.
    pub fn awaiting(&self) -> Option<HashVal> {
        self.pending
    }

    /// Feed in the node answering the last `NeedRemote`.
    pub fn supply_remote(&mut self, node: MstNode) {
        let expected = self.pending.take().expect("no fetch outstanding");
        debug_assert_eq!(node.hash(), expected, "remote node does not match requested hash");
        expand_front(&mut self.remote_q, &node);
    }

    /// Advance until the walk completes or a remote node is required.
    pub fn step(&mut self, local: &MerkleSearchTree) -> WalkStep {
        assert!(self.pending.is_none(), "fetch still outstanding");
        loop {
            match (self.local_q.front().cloned(), self.remote_q.front().cloned()) {
                (None, None) => {
                    return WalkStep::Done(std::mem::take(&mut self.out));
                }
                (Some(El::Tree(a)), Some(El::Tree(b))) if a == b => {
                    self.local_q.pop_front();
                    self.remote_q.pop_front();
                }
                (Some(El::Tree(a)), _) => {
                    self.local_q.pop_front();
                    let node = local.node(&a).expect("local tree is missing its own node");
                    expand_front(&mut self.local_q, node);
                }
                (_, Some(El::Tree(b))) => {
                    self.remote_q.pop_front();
                    self.pending = Some(b);
                    self.fetches += 1;
                    return WalkStep::NeedRemote(b);
                }
                (Some(El::Item(k, _)), None) => {
                    self.out.insert(k);
                    self.local_q.pop_front();
                }
                (None, Some(El::Item(k, _))) => {
                    self.out.insert(k);
                    self.remote_q.pop_front();
                }
                (Some(El::Item(ka, va)), Some(El::Item(kb, vb))) => {
                    if ka < kb {
                        self.out.insert(ka);
                        self.local_q.pop_front();
                    } else if kb < ka {
                        self.out.insert(kb);
                        self.remote_q.pop_front();
                    } else {
                        if va != vb {
                            self.out.insert(ka);
                        }
                        self.local_q.pop_front();
                        self.remote_q.pop_front();
                    }
                }
            }
        }
    }
}

/// Push a node's elements onto the front of a stream in key order:
/// child, item, child, …, item, child (skipping empty children).
fn expand_front(q: &mut VecDeque<El>, node: &MstNode) {
    let mut els = Vec::with_capacity(node.items.len() * 2 + 1);
    for (i, (k, vh)) in node.items.iter().enumerate() {
        if let Some(c) = node.children[i] {
            els.push(El::Tree(c));
        }
        els.push(El::Item(k.clone(), *vh));
    }
    if let Some(c) = node.children[node.items.len()] {
        els.push(El::Tree(c));
    }
    for el in els.into_iter().rev() {
        q.push_front(el);
    }
}

/// Synchronous diff against a remote accessor: returns exactly the keys
/// whose value hashes differ or that exist on one side only. `fetch` is
/// called once per remote node actually needed; equal trees never fetch.
pub fn mst_diff<F>(
    local: &MerkleSearchTree,
    remote_root: HashVal,
    mut fetch: F,
) -> Result<BTreeSet<Key>, FetchFailed>
where
    F: FnMut(&HashVal) -> Result<MstNode, FetchFailed>,
{
    if local.root_hash() == remote_root {
        return Ok(BTreeSet::new());
    }
    let mut walk = DiffWalk::new(local, remote_root);
    loop {
        match walk.step(local) {
            WalkStep::Done(keys) => return Ok(keys),
            WalkStep::NeedRemote(h) => {
                let node = fetch(&h)?;
                walk.supply_remote(node);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(pairs: &[(&str, u8)]) -> BTreeMap<Key, HashVal> {
        pairs
            .iter()
            .map(|(k, tag)| {
                let mut h = [0u8; 32];
                h[0] = *tag;
                h[31] = 0xee;
                (k.as_bytes().to_vec(), h)
            })
            .collect()
    }

    /// Oracle for the layer function: count zeros in the hex string.
    fn layer_oracle(key: &[u8]) -> u8 {
        let hex = format!("{:x}", Sha256::digest(key));
        hex.chars().take_while(|c| *c == '0').count() as u8
    }

    #[test]
    fn layer_matches_hex_oracle() {
        for i in 0..2000u32 {
            let key = format!("key-{i}").into_bytes();
            assert_eq!(layer_of(&key), layer_oracle(&key), "key-{i}");
        }
        // Make sure the corpus actually exercised layers above zero.
        let max = (0..2000u32)
            .map(|i| layer_of(format!("key-{i}").as_bytes()))
            .max()
            .unwrap();
        assert!(max >= 2, "expected some keys above layer 1, got max {max}");
    }

    #[test]
    fn same_content_same_root() {
        let a = entries(&[("x", 1), ("y", 2), ("z", 3)]);
        // Arrive at the same content through a different history: start from
        // divergent values, then converge by overwrite as a merge would.
        let mut b = entries(&[("z", 3), ("y", 5), ("x", 1)]);
        b.insert(b"y".to_vec(), a[&b"y".to_vec()]);
        assert_eq!(mst_build(&a).root_hash(), mst_build(&b).root_hash());
    }

    #[test]
    fn different_content_different_root() {
        let a = entries(&[("x", 1), ("y", 2)]);
        let mut b = a.clone();
        b.get_mut(&b"y".to_vec()).unwrap()[0] = 7;
        assert_ne!(mst_build(&a).root_hash(), mst_build(&b).root_hash());
        let mut c = a.clone();
        c.remove(&b"x".to_vec());
        assert_ne!(mst_build(&a).root_hash(), mst_build(&c).root_hash());
    }

    #[test]
    fn empty_tree_has_canonical_root() {
        assert_eq!(mst_build(&BTreeMap::new()).root_hash(), EMPTY_ROOT);
    }

    #[test]
    fn node_encoding_round_trips() {
        let t = mst_build(&entries(&[("a", 1), ("b", 2), ("c", 3), ("d", 4)]));
        let root = t.node(&t.root_hash()).unwrap();
        let decoded = MstNode::decode(&root.encode()).unwrap();
        assert_eq!(&decoded, root);
        assert_eq!(decoded.hash(), t.root_hash());
    }

    /// Brute-force diff oracle: full set comparison.
    fn diff_oracle(a: &BTreeMap<Key, HashVal>, b: &BTreeMap<Key, HashVal>) -> BTreeSet<Key> {
        let mut out = BTreeSet::new();
        for (k, v) in a {
            if b.get(k) != Some(v) {
                out.insert(k.clone());
            }
        }
        for k in b.keys() {
            if !a.contains_key(k) {
                out.insert(k.clone());
            }
        }
        out
    }

    fn run_diff(
        a: &BTreeMap<Key, HashVal>,
        b: &BTreeMap<Key, HashVal>,
    ) -> (BTreeSet<Key>, u64) {
        let ta = mst_build(a);
        let tb = mst_build(b);
        let mut fetches = 0u64;
        let got = mst_diff(&ta, tb.root_hash(), |h| {
            fetches += 1;
            tb.node(h).cloned().ok_or(FetchFailed)
        })
        .unwrap();
        (got, fetches)
    }

    #[test]
    fn identical_trees_diff_empty_without_fetches() {
        let a = entries(&[("p", 1), ("q", 2), ("r", 3)]);
        let (got, fetches) = run_diff(&a, &a.clone());
        assert!(got.is_empty());
        assert_eq!(fetches, 0, "equal roots must short-circuit");
    }

    #[test]
    fn single_divergent_key_found_exactly() {
        let a = entries(&[("k1", 1), ("k2", 2), ("k3", 3)]);
        let mut b = a.clone();
        b.get_mut(&b"k2".to_vec()).unwrap()[0] = 99;
        let (got, _) = run_diff(&a, &b);
        assert_eq!(got, BTreeSet::from([b"k2".to_vec()]));
    }

    #[test]
    fn diff_matches_brute_force_on_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
        for case in 0..80 {
            let n = rng.gen_range(0..512);
            let mut a: BTreeMap<Key, HashVal> = BTreeMap::new();
            for i in 0..n {
                let key = format!("obj/{case}/{i}").into_bytes();
                let mut vh = [0u8; 32];
                rng.fill(&mut vh);
                a.insert(key, vh);
            }
            let mut b = a.clone();
            // Random edits: flips, inserts, deletes.
            let edits = rng.gen_range(0..40);
            for e in 0..edits {
                match rng.gen_range(0..3) {
                    0 if !b.is_empty() => {
                        let idx = rng.gen_range(0..b.len());
                        let k = b.keys().nth(idx).unwrap().clone();
                        let mut vh = [0u8; 32];
                        rng.fill(&mut vh);
                        b.insert(k, vh);
                    }
                    1 => {
                        let mut vh = [0u8; 32];
                        rng.fill(&mut vh);
                        b.insert(format!("extra/{case}/{e}").into_bytes(), vh);
                    }
                    _ if !b.is_empty() => {
                        let idx = rng.gen_range(0..b.len());
                        let k = b.keys().nth(idx).unwrap().clone();
                        b.remove(&k);
                    }
                    _ => {}
                }
            }
            let (got, _) = run_diff(&a, &b);
            assert_eq!(got, diff_oracle(&a, &b), "case {case}");
        }
    }

    #[test]
    fn fetch_count_logarithmic_for_single_divergence() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let n = 1024usize;
        let mut a: BTreeMap<Key, HashVal> = BTreeMap::new();
        for i in 0..n {
            let mut vh = [0u8; 32];
            rng.fill(&mut vh);
            a.insert(format!("key-{i}").into_bytes(), vh);
        }
        // Bound: 4 * log16(1024) + 4 = 14.
        let bound = (4.0 * (n as f64).log(16.0) + 4.0) as u64;
        for probe in [0usize, 17, 256, 511, 1023] {
            let mut b = a.clone();
            let k = format!("key-{probe}").into_bytes();
            let mut vh = b[&k];
            vh[0] ^= 0xff;
            b.insert(k.clone(), vh);
            let (got, fetches) = run_diff(&a, &b);
            assert_eq!(got, BTreeSet::from([k]));
            assert!(
                fetches <= bound,
                "probe {probe}: {fetches} fetches exceeds bound {bound}"
            );
        }
    }

    #[test]
    fn fetch_failure_aborts_cleanly() {
        let a = entries(&[("a", 1)]);
        let b = entries(&[("a", 2)]);
        let ta = mst_build(&a);
        let tb = mst_build(&b);
        let res = mst_diff(&ta, tb.root_hash(), |_| Err(FetchFailed));
        assert_eq!(res, Err(FetchFailed));
    }

    #[test]
    fn one_sided_trees() {
        let a = entries(&[("only-local", 1), ("shared", 2)]);
        let b = entries(&[("shared", 2), ("only-remote", 3)]);
        let (got, _) = run_diff(&a, &b);
        assert_eq!(
            got,
            BTreeSet::from([b"only-local".to_vec(), b"only-remote".to_vec()])
        );
    }
}
