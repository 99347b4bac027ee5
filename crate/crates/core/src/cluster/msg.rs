//! Wire messages between gateways and executing sites.
//!
//! A gateway turns a client operation into a `Request` addressed to the
//! site that should run it — the session's pinned replica, the consensus
//! leader, or the nearest replica, depending on the function's consistency
//! mode. The executing site answers with a `Reply` carrying the outcome
//! plus admission timestamps, which the metrics layer uses to account
//! queue waits. Leadership misses bounce back as `NotLeader` outcomes and
//! the gateway re-routes, a bounded number of times.

use crate::sim::wire::{RecordReader, RecordWriter, WireError};

/// Why an invocation did not complete normally.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OpError {
    /// The function's handler reported failure.
    HandlerFailed(String),
    /// Site holds no consensus leadership for the class; hint may name it.
    NotLeader { hint: Option<u16> },
    /// Staleness gate: the replica has not synced within the bound.
    StalenessExceeded { worst_peer: u16, staleness_ms: u64 },
    /// Worker queue full at the executing site.
    NoCapacity,
    /// Session guarantee could not be preserved on any reachable replica.
    NoQualifiedReplica,
    /// No replica of the class is reachable at all.
    Unavailable,
    /// The class (or function) is not deployed at the addressed site.
    WrongSite,
    /// A nested invocation did not answer in time.
    InvokeTimeout,
}

/// Result of one invocation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ok(Vec<u8>),
    Err(OpError),
}

impl Outcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, Outcome::Ok(_))
    }

    fn encode_into(&self, w: RecordWriter) -> RecordWriter {
        match self {
            Outcome::Ok(payload) => w.u8(0).bytes(payload),
            Outcome::Err(e) => match e {
                OpError::HandlerFailed(m) => w.u8(1).str(m),
                OpError::NotLeader { hint } => match hint {
                    Some(h) => w.u8(2).u8(1).u64(*h as u64),
                    None => w.u8(2).u8(0).u64(0),
                },
                OpError::StalenessExceeded { worst_peer, staleness_ms } => {
                    w.u8(3).u64(*worst_peer as u64).u64(*staleness_ms)
                }
                OpError::NoCapacity => w.u8(4),
                OpError::NoQualifiedReplica => w.u8(5),
                OpError::Unavailable => w.u8(6),
                OpError::WrongSite => w.u8(7),
                OpError::InvokeTimeout => w.u8(8),
            },
        }
    }

    fn decode_from(r: &mut RecordReader) -> Result<Outcome, WireError> {
        Ok(match r.u8()? {
            0 => Outcome::Ok(r.bytes()?.to_vec()),
            1 => Outcome::Err(OpError::HandlerFailed(r.str()?.to_string())),
            2 => {
                let has = r.u8()? == 1;
                let h = r.u64()?;
                Outcome::Err(OpError::NotLeader { hint: has.then_some(h as u16) })
            }
            3 => Outcome::Err(OpError::StalenessExceeded {
                worst_peer: r.u64()? as u16,
                staleness_ms: r.u64()?,
            }),
            4 => Outcome::Err(OpError::NoCapacity),
            5 => Outcome::Err(OpError::NoQualifiedReplica),
            6 => Outcome::Err(OpError::Unavailable),
            7 => Outcome::Err(OpError::WrongSite),
            8 => Outcome::Err(OpError::InvokeTimeout),
            t => return Err(WireError::BadTag(t)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ObjMsg {
    Request {
        req: u64,
        class: String,
        function: String,
        instance: u64,
        arg: Vec<u8>,
        /// Session token when the op belongs to a read-your-write session.
        session: u64, // 0 = none
        /// Trigger-chain depth; client requests start at 0.
        depth: u32,
    },
    Reply {
        req: u64,
        outcome: Outcome,
        /// When the request was admitted at the executing site.
        arrival_ms: u64,
        /// When a worker slot actually started it (0 if it never started).
        start_ms: u64,
    },
}

impl ObjMsg {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            ObjMsg::Request { req, class, function, instance, arg, session, depth } => {
                RecordWriter::new()
                    .u8(1)
                    .u64(*req)
                    .str(class)
                    .str(function)
                    .u64(*instance)
                    .bytes(arg)
                    .u64(*session)
                    .u32(*depth)
                    .finish()
            }
            ObjMsg::Reply { req, outcome, arrival_ms, start_ms } => outcome
                .encode_into(
                    RecordWriter::new().u8(2).u64(*req).u64(*arrival_ms).u64(*start_ms),
                )
                .finish(),
        }
    }

    pub fn decode(buf: &[u8]) -> Result<ObjMsg, WireError> {
        let mut r = RecordReader::new(buf);
        match r.u8()? {
            1 => Ok(ObjMsg::Request {
                req: r.u64()?,
                class: r.str()?.to_string(),
                function: r.str()?.to_string(),
                instance: r.u64()?,
                arg: r.bytes()?.to_vec(),
                session: r.u64()?,
                depth: r.u32()?,
            }),
            2 => {
                let req = r.u64()?;
                let arrival_ms = r.u64()?;
                let start_ms = r.u64()?;
                let outcome = Outcome::decode_from(&mut r)?;
                Ok(ObjMsg::Reply { req, outcome, arrival_ms, start_ms })
            }
            t => Err(WireError::BadTag(t)),
        }
    }
}
