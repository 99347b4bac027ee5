//! Consensus wire messages.
//!
//! Four messages: vote request/reply for elections, append/reply for
//! replication, heartbeats and read barriers (an append with no entries
//! doubles as both). Sender identity travels on the envelope, not in the
//! message body.

use crate::sim::wire::{RecordReader, RecordWriter, WireError};

/// One replicated log entry. An empty payload is the no-op a new leader
/// writes to anchor its term.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub term: u64,
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RaftMsg {
    RequestVote {
        term: u64,
        last_log_index: u64,
        last_log_term: u64,
    },
    VoteReply {
        term: u64,
        granted: bool,
    },
    Append {
        term: u64,
        prev_index: u64,
        prev_term: u64,
        leader_commit: u64,
        /// Read-barrier sequence number; replies echo it so the leader can
        /// prove it was still leader when the barrier was issued.
        read_seq: u64,
        entries: Vec<Entry>,
    },
    AppendReply {
        term: u64,
        success: bool,
        /// Highest log index known replicated when `success`.
        match_index: u64,
        /// On failure: term of the conflicting entry, or 0 when the probe
        /// was past the end of the log. Lets the leader skip a whole term
        /// of divergence per round trip instead of one entry.
        conflict_term: u64,
        /// On failure: index the leader should probe next — one past the
        /// follower's log, or the first index of `conflict_term`.
        conflict_hint: u64,
        read_seq: u64,
    },
}

impl RaftMsg {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            RaftMsg::RequestVote { term, last_log_index, last_log_term } => {
                RecordWriter::new()
                    .u8(1)
                    .u64(*term)
                    .u64(*last_log_index)
                    .u64(*last_log_term)
                    .finish()
            }
            RaftMsg::VoteReply { term, granted } => RecordWriter::new()
                .u8(2)
                .u64(*term)
                .u8(*granted as u8)
                .finish(),
            RaftMsg::Append { term, prev_index, prev_term, leader_commit, read_seq, entries } => {
                let mut w = RecordWriter::new()
                    .u8(3)
                    .u64(*term)
                    .u64(*prev_index)
                    .u64(*prev_term)
                    .u64(*leader_commit)
                    .u64(*read_seq)
                    .u32(entries.len() as u32);
                for e in entries {
                    w = w.u64(e.term).bytes(&e.payload);
                }
                w.finish()
            }
            RaftMsg::AppendReply {
                term,
                success,
                match_index,
                conflict_term,
                conflict_hint,
                read_seq,
            } => RecordWriter::new()
                .u8(4)
                .u64(*term)
                .u8(*success as u8)
                .u64(*match_index)
                .u64(*conflict_term)
                .u64(*conflict_hint)
                .u64(*read_seq)
                .finish(),
        }
    }

    pub fn decode(buf: &[u8]) -> Result<RaftMsg, WireError> {
        let mut r = RecordReader::new(buf);
        match r.u8()? {
            1 => Ok(RaftMsg::RequestVote {
                term: r.u64()?,
                last_log_index: r.u64()?,
                last_log_term: r.u64()?,
            }),
            2 => Ok(RaftMsg::VoteReply { term: r.u64()?, granted: r.u8()? != 0 }),
            3 => {
                let term = r.u64()?;
                let prev_index = r.u64()?;
                let prev_term = r.u64()?;
                let leader_commit = r.u64()?;
                let read_seq = r.u64()?;
                let n = r.u32()? as usize;
                let mut entries = Vec::with_capacity(n);
                for _ in 0..n {
                    entries.push(Entry { term: r.u64()?, payload: r.bytes()?.to_vec() });
                }
                Ok(RaftMsg::Append { term, prev_index, prev_term, leader_commit, read_seq, entries })
            }
            4 => Ok(RaftMsg::AppendReply {
                term: r.u64()?,
                success: r.u8()? != 0,
                match_index: r.u64()?,
                conflict_term: r.u64()?,
                conflict_hint: r.u64()?,
                read_seq: r.u64()?,
            }),
            t => Err(WireError::BadTag(t)),
        }
    }
}
