//! Leader-based consensus node for one replication group.
//!
//! Pure state machine: messages and timer wakeups go in, actions (sends,
//! commits, read grants) come out; the surrounding runtime owns transport
//! and timers. The failure model is message loss and permanent site death —
//! nodes never restart, so there is no persistence concern.
//!
//! Beyond the basics (randomized elections, log replication with quorum
//! commit), three mechanics matter for the SLA machinery upstairs:
//!
//! * **Term anchoring** — a new leader immediately appends a no-op entry.
//!   Nothing from an earlier term is served or counted committed until an
//!   entry of the current term is in, which keeps reads honest across
//!   leader changes.
//! * **Barrier reads** — a read registers a sequence number and rides the
//!   next heartbeat; it is served from the applied state only once a quorum
//!   has echoed the barrier *and* the term anchor is committed. Reads hit
//!   quorum-confirmed state, never a deposed leader's guess, so a strong
//!   read can never observe a lost write.
//! * **Quorum liveness check** — a leader that has not heard from a quorum
//!   within two election timeouts steps down on its own. A leader stranded
//!   on the minority side of a partition stops accepting work quickly, so
//!   clients fail over to the majority side instead of queueing forever.
//!
//! Log repair after a partition uses conflict-term hints: one failed probe
//! identifies the divergent term and the next probe lands at the fork, so a
//! deposed leader's uncommitted tail is truncated in a couple of round
//! trips no matter how long it grew.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;

use super::msg::{Entry, RaftMsg};
use crate::sim::SimTime;

pub type NodeId = u16;

pub const ELECTION_MIN_MS: u64 = 150;
pub const ELECTION_MAX_MS: u64 = 300;
pub const HEARTBEAT_MS: u64 = 50;
/// A leader silent from a quorum for this long abdicates.
pub const CHECK_QUORUM_MS: u64 = 2 * ELECTION_MAX_MS;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Follower,
    Candidate,
    Leader,
}

/// Raised when a proposal or read lands on a non-leader.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NotLeader {
    pub hint: Option<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RaftAction {
    Send { to: NodeId, msg: RaftMsg },
    /// This node just won an election.
    Elected { term: u64 },
    /// An entry reached quorum and was applied locally, in index order.
    /// Empty payloads are term anchors; state machines skip them.
    Committed { index: u64, term: u64, payload: Vec<u8> },
    /// A barrier read may now be served from locally applied state.
    ReadReady { read_id: u64, at_index: u64 },
    /// Leadership lost; callers fail pending proposals and reads so
    /// clients can retry against the new leader.
    SteppedDown,
}

pub struct RaftNode {
    id: NodeId,
    members: Vec<NodeId>,
    quorum: usize,

    current_term: u64,
    voted_for: Option<NodeId>,
    log: Vec<Entry>,

    role: Role,
    commit_index: u64,
    leader_hint: Option<NodeId>,
    votes: BTreeSet<NodeId>,

    next_index: BTreeMap<NodeId, u64>,
    match_index: BTreeMap<NodeId, u64>,
    term_start_index: u64,
    last_contact: BTreeMap<NodeId, SimTime>,

    read_seq: u64,
    read_acks: BTreeMap<NodeId, u64>,
    pending_reads: VecDeque<u64>,

    election_deadline: SimTime,
    heartbeat_due: SimTime,
}

impl RaftNode {
    pub fn new<R: Rng>(id: NodeId, mut members: Vec<NodeId>, now: SimTime, rng: &mut R) -> RaftNode {
        members.sort_unstable();
        members.dedup();
        assert!(members.contains(&id), "node must be a member of its own group");
        let quorum = members.len() / 2 + 1;
        RaftNode {
            id,
            members,
            quorum,
            current_term: 0,
            voted_for: None,
            log: Vec::new(),
            role: Role::Follower,
            commit_index: 0,
            leader_hint: None,
            votes: BTreeSet::new(),
            next_index: BTreeMap::new(),
            match_index: BTreeMap::new(),
            term_start_index: 0,
            last_contact: BTreeMap::new(),
            read_seq: 0,
            read_acks: BTreeMap::new(),
            pending_reads: VecDeque::new(),
            election_deadline: now + election_jitter(rng),
            heartbeat_due: SimTime::MAX,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn is_leader(&self) -> bool {
        self.role == Role::Leader
    }

    pub fn current_term(&self) -> u64 {
        self.current_term
    }

    pub fn commit_index(&self) -> u64 {
        self.commit_index
    }

    pub fn leader_hint(&self) -> Option<NodeId> {
        self.leader_hint
    }

    pub fn log(&self) -> &[Entry] {
        &self.log
    }

    /// When the runtime should next call [`RaftNode::on_wakeup`]. Spurious
    /// earlier wakeups are harmless; deadlines are re-checked.
    pub fn next_wakeup(&self) -> SimTime {
        match self.role {
            Role::Leader => self.heartbeat_due,
            _ => self.election_deadline,
        }
    }

    pub fn on_wakeup<R: Rng>(&mut self, now: SimTime, rng: &mut R) -> Vec<RaftAction> {
        match self.role {
            Role::Leader => {
                if self.quorum_silent_since(now) {
                    return self.step_down(self.current_term, now, rng);
                }
                if now >= self.heartbeat_due {
                    self.heartbeat_due = now + HEARTBEAT_MS;
                    return self.broadcast_appends();
                }
                vec![]
            }
            _ => {
                if now >= self.election_deadline {
                    self.start_election(now, rng)
                } else {
                    vec![]
                }
            }
        }
    }

    /// Append a client command. Fails unless this node currently leads;
    /// the error carries the best known leader for redirect.
    pub fn propose(
        &mut self,
        now: SimTime,
        payload: Vec<u8>,
    ) -> Result<(u64, Vec<RaftAction>), NotLeader> {
        if self.role != Role::Leader {
            return Err(NotLeader { hint: self.leader_hint });
        }
        self.log.push(Entry { term: self.current_term, payload });
        let index = self.last_index();
        self.heartbeat_due = now + HEARTBEAT_MS;
        let mut acts = self.broadcast_appends();
        acts.extend(self.advance_commit());
        Ok((index, acts))
    }

    /// Register a barrier read. The returned id resolves via
    /// [`RaftAction::ReadReady`] once a quorum confirms leadership at this
    /// barrier and the term anchor is committed.
    pub fn register_read(
        &mut self,
        now: SimTime,
    ) -> Result<(u64, Vec<RaftAction>), NotLeader> {
        if self.role != Role::Leader {
            return Err(NotLeader { hint: self.leader_hint });
        }
        self.read_seq += 1;
        let read_id = self.read_seq;
        self.pending_reads.push_back(read_id);
        // The barrier rides an immediate heartbeat; replies carry it back.
        self.heartbeat_due = now + HEARTBEAT_MS;
        let mut acts = self.broadcast_appends();
        acts.extend(self.ready_reads());
        Ok((read_id, acts))
    }

    pub fn on_message<R: Rng>(
        &mut self,
        now: SimTime,
        from: NodeId,
        msg: RaftMsg,
        rng: &mut R,
    ) -> Vec<RaftAction> {
        match msg {
            RaftMsg::RequestVote { term, last_log_index, last_log_term } => {
                self.on_request_vote(now, from, term, last_log_index, last_log_term, rng)
            }
            RaftMsg::VoteReply { term, granted } => {
                self.on_vote_reply(now, from, term, granted, rng)
            }
            RaftMsg::Append { term, prev_index, prev_term, leader_commit, read_seq, entries } => {
                self.on_append(now, from, term, prev_index, prev_term, leader_commit, read_seq, entries, rng)
            }
            RaftMsg::AppendReply { term, success, match_index, conflict_term, conflict_hint, read_seq } => {
                self.on_append_reply(
                    now, from, term, success, match_index, conflict_term, conflict_hint, read_seq, rng,
                )
            }
        }
    }

    fn on_request_vote<R: Rng>(
        &mut self,
        now: SimTime,
        from: NodeId,
        term: u64,
        last_log_index: u64,
        last_log_term: u64,
        rng: &mut R,
    ) -> Vec<RaftAction> {
        let mut acts = Vec::new();
        if term > self.current_term {
            acts.extend(self.step_down(term, now, rng));
        }
        let (my_index, my_term) = self.last_log_info();
        let up_to_date = (last_log_term, last_log_index) >= (my_term, my_index);
        let granted = term == self.current_term
            && up_to_date
            && (self.voted_for.is_none() || self.voted_for == Some(from));
        if granted {
            self.voted_for = Some(from);
            self.election_deadline = now + election_jitter(rng);
        }
        acts.push(RaftAction::Send {
            to: from,
            msg: RaftMsg::VoteReply { term: self.current_term, granted },
        });
        acts
    }

    fn on_vote_reply<R: Rng>(
        &mut self,
        now: SimTime,
        from: NodeId,
        term: u64,
        granted: bool,
        rng: &mut R,
    ) -> Vec<RaftAction> {
        if term > self.current_term {
            return self.step_down(term, now, rng);
        }
        if self.role == Role::Candidate && term == self.current_term && granted {
            self.votes.insert(from);
            if self.votes.len() >= self.quorum {
                return self.become_leader(now);
            }
        }
        vec![]
    }

    #[allow(clippy::too_many_arguments)]
    fn on_append<R: Rng>(
        &mut self,
        now: SimTime,
        from: NodeId,
        term: u64,
        prev_index: u64,
        prev_term: u64,
        leader_commit: u64,
        read_seq: u64,
        entries: Vec<Entry>,
        rng: &mut R,
    ) -> Vec<RaftAction> {
        if term < self.current_term {
            return vec![RaftAction::Send {
                to: from,
                msg: RaftMsg::AppendReply {
                    term: self.current_term,
                    success: false,
                    match_index: 0,
                    conflict_term: 0,
                    conflict_hint: 0,
                    read_seq,
                },
            }];
        }
        let mut acts = Vec::new();
        if term > self.current_term || self.role != Role::Follower {
            acts.extend(self.step_down(term, now, rng));
        }
        self.leader_hint = Some(from);
        self.election_deadline = now + election_jitter(rng);

        // Consistency probe.
        if prev_index > self.last_index() {
            acts.push(RaftAction::Send {
                to: from,
                msg: RaftMsg::AppendReply {
                    term: self.current_term,
                    success: false,
                    match_index: 0,
                    conflict_term: 0,
                    conflict_hint: self.last_index() + 1,
                    read_seq,
                },
            });
            return acts;
        }
        if prev_index >= 1 && self.term_at(prev_index) != prev_term {
            let conflict_term = self.term_at(prev_index);
            let mut first = prev_index;
            while first > 1 && self.term_at(first - 1) == conflict_term {
                first -= 1;
            }
            acts.push(RaftAction::Send {
                to: from,
                msg: RaftMsg::AppendReply {
                    term: self.current_term,
                    success: false,
                    match_index: 0,
                    conflict_term,
                    conflict_hint: first,
                    read_seq,
                },
            });
            return acts;
        }

        // Splice: skip entries already present, truncate at the first
        // disagreement, append the rest.
        let mut index = prev_index;
        for entry in entries {
            index += 1;
            if index <= self.last_index() {
                if self.term_at(index) != entry.term {
                    assert!(
                        index > self.commit_index,
                        "attempted truncation of committed entries"
                    );
                    self.log.truncate(index as usize - 1);
                    self.log.push(entry);
                }
            } else {
                self.log.push(entry);
            }
        }
        let last_new = index;
        if leader_commit > self.commit_index {
            let target = leader_commit.min(last_new);
            acts.extend(self.apply_to(target));
        }
        acts.push(RaftAction::Send {
            to: from,
            msg: RaftMsg::AppendReply {
                term: self.current_term,
                success: true,
                match_index: last_new,
                conflict_term: 0,
                conflict_hint: 0,
                read_seq,
            },
        });
        acts
    }

    #[allow(clippy::too_many_arguments)]
    fn on_append_reply<R: Rng>(
        &mut self,
        now: SimTime,
        from: NodeId,
        term: u64,
        success: bool,
        match_index: u64,
        conflict_term: u64,
        conflict_hint: u64,
        read_seq: u64,
        rng: &mut R,
    ) -> Vec<RaftAction> {
        if term > self.current_term {
            return self.step_down(term, now, rng);
        }
        if self.role != Role::Leader || term < self.current_term {
            return vec![];
        }
        self.last_contact.insert(from, now);
        let ack = self.read_acks.entry(from).or_insert(0);
        *ack = (*ack).max(read_seq);

        let mut acts = Vec::new();
        if success {
            let m = self.match_index.entry(from).or_insert(0);
            *m = (*m).max(match_index);
            let next = self.next_index.entry(from).or_insert(1);
            *next = (*next).max(match_index + 1);
            acts.extend(self.advance_commit());
        } else {
            // Jump past the follower's divergent term if we know it, else
            // probe where the follower suggested.
            let next = if conflict_term > 0 {
                match self.last_index_of_term(conflict_term) {
                    Some(i) => i + 1,
                    None => conflict_hint,
                }
            } else {
                conflict_hint
            };
            let next = next.clamp(1, self.last_index() + 1);
            self.next_index.insert(from, next);
            acts.push(self.append_for(from));
        }
        acts.extend(self.ready_reads());
        acts
    }

    fn start_election<R: Rng>(&mut self, now: SimTime, rng: &mut R) -> Vec<RaftAction> {
        self.current_term += 1;
        self.role = Role::Candidate;
        self.voted_for = Some(self.id);
        self.votes = BTreeSet::from([self.id]);
        self.leader_hint = None;
        self.election_deadline = now + election_jitter(rng);
        if self.votes.len() >= self.quorum {
            return self.become_leader(now);
        }
        let (last_log_index, last_log_term) = self.last_log_info();
        self.peer_ids()
            .into_iter()
            .map(|to| RaftAction::Send {
                to,
                msg: RaftMsg::RequestVote {
                    term: self.current_term,
                    last_log_index,
                    last_log_term,
                },
            })
            .collect()
    }

    fn become_leader(&mut self, now: SimTime) -> Vec<RaftAction> {
        self.role = Role::Leader;
        self.leader_hint = Some(self.id);
        self.log.push(Entry { term: self.current_term, payload: Vec::new() });
        let anchor = self.last_index();
        self.term_start_index = anchor;
        self.next_index = self.peer_ids().into_iter().map(|p| (p, anchor)).collect();
        self.match_index = self.peer_ids().into_iter().map(|p| (p, 0)).collect();
        self.last_contact = self.peer_ids().into_iter().map(|p| (p, now)).collect();
        self.read_acks.clear();
        self.heartbeat_due = now + HEARTBEAT_MS;
        let mut acts = vec![RaftAction::Elected { term: self.current_term }];
        acts.extend(self.broadcast_appends());
        acts.extend(self.advance_commit());
        acts
    }

    fn step_down<R: Rng>(&mut self, term: u64, now: SimTime, rng: &mut R) -> Vec<RaftAction> {
        let was_leader = self.role == Role::Leader;
        if term > self.current_term {
            self.current_term = term;
            self.voted_for = None;
        }
        self.role = Role::Follower;
        self.votes.clear();
        self.pending_reads.clear();
        self.read_acks.clear();
        self.heartbeat_due = SimTime::MAX;
        self.election_deadline = now + election_jitter(rng);
        if was_leader {
            vec![RaftAction::SteppedDown]
        } else {
            vec![]
        }
    }

    fn broadcast_appends(&mut self) -> Vec<RaftAction> {
        self.peer_ids().into_iter().map(|p| self.append_for(p)).collect()
    }

    /// Compose an append for `peer` from its next index, then optimistically
    /// mark everything as shipped. Loss is repaired by the reply to the next
    /// heartbeat probing past the follower's log.
    fn append_for(&mut self, peer: NodeId) -> RaftAction {
        let next = *self.next_index.get(&peer).unwrap_or(&1);
        let prev_index = next - 1;
        let prev_term = self.term_at(prev_index);
        let entries = self.log[prev_index as usize..].to_vec();
        self.next_index.insert(peer, self.last_index() + 1);
        RaftAction::Send {
            to: peer,
            msg: RaftMsg::Append {
                term: self.current_term,
                prev_index,
                prev_term,
                leader_commit: self.commit_index,
                read_seq: self.read_seq,
                entries,
            },
        }
    }

    fn advance_commit(&mut self) -> Vec<RaftAction> {
        let mut matches: Vec<u64> = self
            .peer_ids()
            .into_iter()
            .map(|p| *self.match_index.get(&p).unwrap_or(&0))
            .collect();
        matches.push(self.last_index());
        matches.sort_unstable_by(|a, b| b.cmp(a));
        let candidate = matches[self.quorum - 1];
        if candidate > self.commit_index && self.term_at(candidate) == self.current_term {
            self.apply_to(candidate)
        } else {
            vec![]
        }
    }

    fn apply_to(&mut self, target: u64) -> Vec<RaftAction> {
        let mut acts = Vec::new();
        while self.commit_index < target {
            self.commit_index += 1;
            let entry = &self.log[self.commit_index as usize - 1];
            acts.push(RaftAction::Committed {
                index: self.commit_index,
                term: entry.term,
                payload: entry.payload.clone(),
            });
        }
        acts
    }

    /// Release barrier reads once a quorum has echoed their sequence and an
    /// entry of this term is committed.
    fn ready_reads(&mut self) -> Vec<RaftAction> {
        if self.role != Role::Leader
            || self.pending_reads.is_empty()
            || self.commit_index < self.term_start_index
        {
            return vec![];
        }
        let mut acked: Vec<u64> = self
            .peer_ids()
            .into_iter()
            .map(|p| *self.read_acks.get(&p).unwrap_or(&0))
            .collect();
        acked.push(self.read_seq);
        acked.sort_unstable_by(|a, b| b.cmp(a));
        let barrier = acked[self.quorum - 1];
        let mut acts = Vec::new();
        while let Some(&seq) = self.pending_reads.front() {
            if seq > barrier {
                break;
            }
            self.pending_reads.pop_front();
            acts.push(RaftAction::ReadReady { read_id: seq, at_index: self.commit_index });
        }
        acts
    }

    fn quorum_silent_since(&self, now: SimTime) -> bool {
        let mut contacts: Vec<SimTime> = self
            .peer_ids()
            .into_iter()
            .map(|p| *self.last_contact.get(&p).unwrap_or(&0))
            .collect();
        contacts.push(now);
        contacts.sort_unstable_by(|a, b| b.cmp(a));
        now.saturating_sub(contacts[self.quorum - 1]) > CHECK_QUORUM_MS
    }

    fn peer_ids(&self) -> Vec<NodeId> {
        self.members.iter().copied().filter(|p| *p != self.id).collect()
    }

    fn last_index(&self) -> u64 {
        self.log.len() as u64
    }

    fn term_at(&self, index: u64) -> u64 {
        if index == 0 || index > self.last_index() {
            0
        } else {
            self.log[index as usize - 1].term
        }
    }

    fn last_log_info(&self) -> (u64, u64) {
        (self.last_index(), self.term_at(self.last_index()))
    }

    fn last_index_of_term(&self, term: u64) -> Option<u64> {
        (1..=self.last_index()).rev().find(|&i| self.term_at(i) == term)
    }
}

fn election_jitter<R: Rng>(rng: &mut R) -> u64 {
    rng.gen_range(ELECTION_MIN_MS..=ELECTION_MAX_MS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn sends(acts: &[RaftAction]) -> Vec<(NodeId, RaftMsg)> {
        acts.iter()
            .filter_map(|a| match a {
                RaftAction::Send { to, msg } => Some((*to, msg.clone())),
                _ => None,
            })
            .collect()
    }

    fn commits(acts: &[RaftAction]) -> Vec<u64> {
        acts.iter()
            .filter_map(|a| match a {
                RaftAction::Committed { index, .. } => Some(*index),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn single_node_elects_itself_and_commits_immediately() {
        let mut r = rng();
        let mut n = RaftNode::new(0, vec![0], 0, &mut r);
        let at = n.next_wakeup();
        assert!((ELECTION_MIN_MS..=ELECTION_MAX_MS).contains(&at));
        let acts = n.on_wakeup(at, &mut r);
        assert!(acts.contains(&RaftAction::Elected { term: 1 }));
        // Term anchor commits at once with a quorum of one.
        assert_eq!(commits(&acts), vec![1]);

        let (index, acts) = n.propose(at + 1, b"cmd".to_vec()).unwrap();
        assert_eq!(index, 2);
        assert_eq!(commits(&acts), vec![2]);

        let (read_id, acts) = n.register_read(at + 2).unwrap();
        assert!(acts.contains(&RaftAction::ReadReady { read_id, at_index: 2 }));
    }

    /// Deliver every queued message (and the messages those trigger) until
    /// quiescent, skipping directed links listed in `blocked`. Returns all
    /// non-send actions tagged with the node that produced them.
    fn deliver_all(
        nodes: &mut [RaftNode],
        r: &mut ChaCha8Rng,
        seed: Vec<(NodeId, NodeId, RaftMsg)>,
        blocked: &[(NodeId, NodeId)],
    ) -> Vec<(NodeId, RaftAction)> {
        let mut queue: VecDeque<(NodeId, NodeId, RaftMsg)> = seed.into();
        let mut out = Vec::new();
        let mut now = 1_000;
        while let Some((to, from, msg)) = queue.pop_front() {
            if blocked.contains(&(from, to)) {
                continue;
            }
            now += 1;
            let idx = nodes.iter().position(|n| n.id() == to).unwrap();
            for act in nodes[idx].on_message(now, from, msg, r) {
                match act {
                    RaftAction::Send { to: next_to, msg: next_msg } => {
                        queue.push_back((next_to, to, next_msg));
                    }
                    other => out.push((to, other)),
                }
            }
        }
        out
    }

    /// Drive a three-node group through an election over a full mesh.
    fn elect_leader(nodes: &mut [RaftNode; 3], r: &mut ChaCha8Rng) -> usize {
        let first = (0..3).min_by_key(|&i| nodes[i].next_wakeup()).unwrap();
        let at = nodes[first].next_wakeup();
        let acts = nodes[first].on_wakeup(at, r);
        let seed = sends(&acts)
            .into_iter()
            .map(|(to, msg)| (to, first as NodeId, msg))
            .collect();
        deliver_all(nodes, r, seed, &[]);
        assert!(nodes[first].is_leader());
        first
    }

    #[test]
    fn three_nodes_elect_exactly_one_leader() {
        let mut r = rng();
        let mut nodes = [
            RaftNode::new(0, vec![0, 1, 2], 0, &mut r),
            RaftNode::new(1, vec![0, 1, 2], 0, &mut r),
            RaftNode::new(2, vec![0, 1, 2], 0, &mut r),
        ];
        let leader = elect_leader(&mut nodes, &mut r);
        let leaders = nodes.iter().filter(|n| n.is_leader()).count();
        assert_eq!(leaders, 1);
        assert_eq!(nodes[leader].role(), Role::Leader);
        // The term anchor reaches quorum during the pump.
        assert!(nodes[leader].commit_index() >= 1);
    }

    #[test]
    fn vote_denied_to_candidate_with_stale_log() {
        let mut r = rng();
        let mut n = RaftNode::new(0, vec![0, 1, 2], 0, &mut r);
        // Give node 0 a log entry at term 2 via an append from a leader.
        let acts = n.on_message(
            10,
            1,
            RaftMsg::Append {
                term: 2,
                prev_index: 0,
                prev_term: 0,
                leader_commit: 0,
                read_seq: 0,
                entries: vec![Entry { term: 2, payload: b"x".to_vec() }],
            },
            &mut r,
        );
        assert!(matches!(
            sends(&acts)[0].1,
            RaftMsg::AppendReply { success: true, .. }
        ));

        // Candidate at a higher term but with an older log must be refused.
        let acts = n.on_message(
            20,
            2,
            RaftMsg::RequestVote { term: 3, last_log_index: 0, last_log_term: 0 },
            &mut r,
        );
        assert!(matches!(
            sends(&acts)[0].1,
            RaftMsg::VoteReply { granted: false, .. }
        ));
        // One with an equal log is granted.
        let acts = n.on_message(
            30,
            2,
            RaftMsg::RequestVote { term: 3, last_log_index: 1, last_log_term: 2 },
            &mut r,
        );
        assert!(matches!(
            sends(&acts)[0].1,
            RaftMsg::VoteReply { granted: true, .. }
        ));
    }

    #[test]
    fn commit_needs_only_a_quorum_of_three() {
        let mut r = rng();
        let mut nodes = [
            RaftNode::new(0, vec![0, 1, 2], 0, &mut r),
            RaftNode::new(1, vec![0, 1, 2], 0, &mut r),
            RaftNode::new(2, vec![0, 1, 2], 0, &mut r),
        ];
        let leader = elect_leader(&mut nodes, &mut r);
        let lid = leader as NodeId;
        // Cut one follower off entirely; leader plus the other is a quorum.
        let cut = ((leader + 1) % 3) as NodeId;
        let blocked = [(lid, cut), (cut, lid)];

        let (index, acts) = nodes[leader].propose(5_000, b"w".to_vec()).unwrap();
        let seed = sends(&acts).into_iter().map(|(to, m)| (to, lid, m)).collect();
        let actions = deliver_all(&mut nodes, &mut r, seed, &blocked);
        assert!(
            actions
                .iter()
                .any(|(n, a)| *n == lid
                    && matches!(a, RaftAction::Committed { index: i, .. } if *i == index)),
            "leader commits with one follower: {actions:?}"
        );
        assert_eq!(nodes[leader].commit_index(), index);
        // The cut follower saw nothing.
        assert!(nodes[cut as usize].log().len() < nodes[leader].log().len());
    }

    #[test]
    fn divergent_follower_log_repairs_in_two_probes() {
        let mut r = rng();
        let mut follower = RaftNode::new(1, vec![0, 1, 2], 0, &mut r);
        // Follower holds a three-entry tail from a deposed term-1 leader.
        for _ in 0..3 {
            let acts = follower.on_message(
                5,
                2,
                RaftMsg::Append {
                    term: 1,
                    prev_index: follower.last_index(),
                    prev_term: if follower.last_index() == 0 { 0 } else { 1 },
                    leader_commit: 0,
                    read_seq: 0,
                    entries: vec![Entry { term: 1, payload: b"stale".to_vec() }],
                },
                &mut r,
            );
            assert!(matches!(sends(&acts)[0].1, RaftMsg::AppendReply { success: true, .. }));
        }

        // New term-3 leader probes at its own last index (2, term 3).
        let acts = follower.on_message(
            100,
            0,
            RaftMsg::Append {
                term: 3,
                prev_index: 2,
                prev_term: 3,
                leader_commit: 0,
                read_seq: 0,
                entries: vec![],
            },
            &mut r,
        );
        let reply = &sends(&acts)[0].1;
        let RaftMsg::AppendReply { success: false, conflict_term: 1, conflict_hint: 1, .. } = reply
        else {
            panic!("expected conflict hint at the fork, got {reply:?}");
        };

        // The leader (holding no term-1 entries) retries from index 1 and
        // overwrites the whole divergent tail in one append.
        let acts = follower.on_message(
            110,
            0,
            RaftMsg::Append {
                term: 3,
                prev_index: 0,
                prev_term: 0,
                leader_commit: 0,
                read_seq: 0,
                entries: vec![
                    Entry { term: 2, payload: b"a".to_vec() },
                    Entry { term: 3, payload: vec![] },
                ],
            },
            &mut r,
        );
        assert!(matches!(
            sends(&acts)[0].1,
            RaftMsg::AppendReply { success: true, match_index: 2, .. }
        ));
        assert_eq!(follower.log().len(), 2);
        assert_eq!(follower.log()[0].term, 2);
    }

    #[test]
    fn barrier_read_waits_for_quorum_echo() {
        let mut r = rng();
        let mut nodes = [
            RaftNode::new(0, vec![0, 1, 2], 0, &mut r),
            RaftNode::new(1, vec![0, 1, 2], 0, &mut r),
            RaftNode::new(2, vec![0, 1, 2], 0, &mut r),
        ];
        let leader = elect_leader(&mut nodes, &mut r);
        let lid = leader as NodeId;
        assert!(nodes[leader].commit_index() >= 1, "anchor committed in pump");

        let (read_id, acts) = nodes[leader].register_read(2_020).unwrap();
        assert!(
            !acts.iter().any(|a| matches!(a, RaftAction::ReadReady { .. })),
            "read must wait for a quorum echo"
        );
        // One follower echoing the barrier completes the quorum.
        let cut = ((leader + 1) % 3) as NodeId;
        let blocked = [(lid, cut), (cut, lid)];
        let seed = sends(&acts).into_iter().map(|(to, m)| (to, lid, m)).collect();
        let actions = deliver_all(&mut nodes, &mut r, seed, &blocked);
        assert!(
            actions.iter().any(|(n, a)| *n == lid
                && matches!(a, RaftAction::ReadReady { read_id: id, .. } if *id == read_id)),
            "barrier read served after one echo: {actions:?}"
        );
    }

    #[test]
    fn higher_term_reply_dethrones_leader() {
        let mut r = rng();
        let mut n = RaftNode::new(0, vec![0], 0, &mut r);
        n.on_wakeup(n.next_wakeup(), &mut r);
        assert!(n.is_leader());
        let acts = n.on_message(
            500,
            1,
            RaftMsg::AppendReply {
                term: 99,
                success: false,
                match_index: 0,
                conflict_term: 0,
                conflict_hint: 0,
                read_seq: 0,
            },
            &mut r,
        );
        assert_eq!(acts, vec![RaftAction::SteppedDown]);
        assert_eq!(n.current_term(), 99);
        assert!(!n.is_leader());
    }

    #[test]
    fn isolated_leader_abdicates_after_quorum_silence() {
        let mut r = rng();
        let mut nodes = [
            RaftNode::new(0, vec![0, 1, 2], 0, &mut r),
            RaftNode::new(1, vec![0, 1, 2], 0, &mut r),
            RaftNode::new(2, vec![0, 1, 2], 0, &mut r),
        ];
        let leader = elect_leader(&mut nodes, &mut r);
        // No replies ever arrive; after the silence window the next wakeup
        // must surrender leadership.
        let late = 10_000 + CHECK_QUORUM_MS;
        let acts = nodes[leader].on_wakeup(late, &mut r);
        assert!(acts.contains(&RaftAction::SteppedDown));
        assert!(!nodes[leader].is_leader());
    }

    #[test]
    fn proposals_rejected_off_leader_with_hint() {
        let mut r = rng();
        let mut n = RaftNode::new(1, vec![0, 1, 2], 0, &mut r);
        assert_eq!(n.propose(5, vec![]).unwrap_err(), NotLeader { hint: None });
        n.on_message(
            10,
            0,
            RaftMsg::Append {
                term: 1,
                prev_index: 0,
                prev_term: 0,
                leader_commit: 0,
                read_seq: 0,
                entries: vec![],
            },
            &mut r,
        );
        assert_eq!(n.propose(15, vec![]).unwrap_err(), NotLeader { hint: Some(0) });
        assert_eq!(n.register_read(15).unwrap_err(), NotLeader { hint: Some(0) });
    }
}
