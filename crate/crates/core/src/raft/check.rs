//! Safety checkers over consensus execution traces.
//!
//! A driver records two kinds of events while a group runs — elections
//! (with a snapshot of the winner's log) and per-node entry applications —
//! and hands the trace here afterwards. The checks are the classic safety
//! arguments, verified mechanically:
//!
//! * at most one leader per term,
//! * no two nodes apply different entries at the same index,
//! * every elected leader's log already contains everything applied
//!   anywhere before its election,
//! * final logs agree on their common prefix wherever terms agree.

use std::collections::BTreeMap;

use thiserror::Error;

use super::msg::Entry;
use super::node::NodeId;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceEvent {
    Elected {
        at_ms: u64,
        node: NodeId,
        term: u64,
        /// The winner's full log at the moment of election.
        log: Vec<Entry>,
    },
    Applied {
        at_ms: u64,
        node: NodeId,
        index: u64,
        term: u64,
        payload: Vec<u8>,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SafetyViolation {
    #[error("term {term} elected two leaders: node {first} and node {second}")]
    DualLeaders { term: u64, first: NodeId, second: NodeId },
    #[error("index {index}: node {a} applied term {term_a}, node {b} applied term {term_b}")]
    DivergentApply { index: u64, a: NodeId, term_a: u64, b: NodeId, term_b: u64 },
    #[error(
        "node {leader} won term {leader_term} without committed entry \
         {index} (term {term}) in its log"
    )]
    LostCommit { leader: NodeId, leader_term: u64, index: u64, term: u64 },
    #[error(
        "logs of node {a} and node {b} agree on term at index {agree} \
         but differ at index {index}"
    )]
    PrefixMismatch { a: NodeId, b: NodeId, agree: u64, index: u64 },
}

/// Check election safety, apply consistency, and leader completeness over
/// a trace in execution order.
pub fn check_trace(events: &[TraceEvent]) -> Result<(), SafetyViolation> {
    let mut leaders: BTreeMap<u64, NodeId> = BTreeMap::new();
    let mut applied: BTreeMap<u64, (u64, Vec<u8>, NodeId)> = BTreeMap::new();
    for ev in events {
        match ev {
            TraceEvent::Elected { node, term, log, .. } => {
                if let Some(&first) = leaders.get(term) {
                    if first != *node {
                        return Err(SafetyViolation::DualLeaders {
                            term: *term,
                            first,
                            second: *node,
                        });
                    }
                }
                leaders.insert(*term, *node);
                for (index, (term_applied, payload, _)) in &applied {
                    let holds = log
                        .get(*index as usize - 1)
                        .map(|e| e.term == *term_applied && &e.payload == payload)
                        .unwrap_or(false);
                    if !holds {
                        return Err(SafetyViolation::LostCommit {
                            leader: *node,
                            leader_term: *term,
                            index: *index,
                            term: *term_applied,
                        });
                    }
                }
            }
            TraceEvent::Applied { node, index, term, payload, .. } => {
                match applied.get(index) {
                    Some((t, p, first)) if *t != *term || p != payload => {
                        return Err(SafetyViolation::DivergentApply {
                            index: *index,
                            a: *first,
                            term_a: *t,
                            b: *node,
                            term_b: *term,
                        });
                    }
                    Some(_) => {}
                    None => {
                        applied.insert(*index, (*term, payload.clone(), *node));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Check the log matching property on final logs: wherever two logs hold
/// the same term at the same index, they must be identical up to there.
pub fn check_log_matching(logs: &[(NodeId, Vec<Entry>)]) -> Result<(), SafetyViolation> {
    for (i, (na, la)) in logs.iter().enumerate() {
        for (nb, lb) in logs.iter().skip(i + 1) {
            let common = la.len().min(lb.len());
            let agree = (0..common)
                .rev()
                .find(|&k| la[k].term == lb[k].term)
                .map(|k| k + 1);
            let Some(agree) = agree else { continue };
            for k in 0..agree {
                if la[k] != lb[k] {
                    return Err(SafetyViolation::PrefixMismatch {
                        a: *na,
                        b: *nb,
                        agree: agree as u64,
                        index: k as u64 + 1,
                    });
                }
            }
        }
    }
    Ok(())
}
