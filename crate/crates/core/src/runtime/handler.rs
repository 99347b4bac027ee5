//! Function handlers: resumable state machines behind a name registry.
//!
//! A handler never blocks. Each call to [`Handler::step`] advances the
//! function until it either finishes or requests an effect — commit a
//! write, refresh (read) an attribute, or invoke another function. The
//! runtime performs the effect (which may cross the network, wait on
//! consensus, or queue for capacity) and re-enters the handler at the
//! `then` label with the effect's result. Worker slots are only held for
//! compute, never across effect waits.
//!
//! Handlers are registered by name; class definitions reference them by
//! that name, and deployment resolves the lookup at validation time. The
//! built-ins cover the usual shapes: pure compute, single reads and
//! writes, counter bumps, read-modify-write chains, and cross-object
//! calls.

use std::collections::BTreeSet;
use std::sync::Arc;

use std::collections::BTreeMap;

use crate::antientropy::WriteOp;
use crate::sim::wire::{RecordReader, RecordWriter};

/// Invocation context handed to every step.
pub struct HandlerCtx<'a> {
    /// Object instance the function runs against.
    pub instance: u64,
    /// Caller-supplied argument, unchanged across steps.
    pub arg: &'a [u8],
    /// Resumption label: 0 on entry, else the `then` of the last effect.
    pub step: u32,
    /// Result of the last effect: the value read by a refresh, or the
    /// payload returned by an invoked function. Empty for commits.
    pub reply: &'a [u8],
    /// Handler-private state carried across steps of one invocation.
    pub scratch: &'a mut Vec<u8>,
}

/// What a handler wants next.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HandlerStep {
    /// Done; the payload goes back to the caller.
    Complete(Vec<u8>),
    /// Application failure; the message goes back to the caller.
    Fail(String),
    /// Write an attribute under the class consistency mode, then resume.
    Commit { attr: String, op: WriteOp, then: u32 },
    /// Read an attribute under the class consistency mode, then resume.
    Refresh { attr: String, then: u32 },
    /// Call a function on another object, then resume with its result.
    Invoke { class: String, instance: u64, function: String, arg: Vec<u8>, then: u32 },
}

pub trait Handler: Send + Sync {
    fn step(&self, ctx: &mut HandlerCtx) -> HandlerStep;
}

/// Name → handler lookup used at class validation and at dispatch.
#[derive(Clone, Default)]
pub struct HandlerRegistry {
    by_name: BTreeMap<String, Arc<dyn Handler>>,
}

impl HandlerRegistry {
    pub fn new() -> HandlerRegistry {
        HandlerRegistry::default()
    }

    /// Registry preloaded with every built-in handler.
    pub fn standard() -> HandlerRegistry {
        let mut reg = HandlerRegistry::new();
        reg.register("echo", Arc::new(Echo));
        reg.register("busy", Arc::new(Busy));
        reg.register("fail", Arc::new(AlwaysFail));
        reg.register("put", Arc::new(Put));
        reg.register("get", Arc::new(Get));
        reg.register("del", Arc::new(Del));
        reg.register("incr", Arc::new(Incr));
        reg.register("map_put", Arc::new(MapPut));
        reg.register("copy", Arc::new(Copy));
        reg.register("relay", Arc::new(Relay));
        reg
    }

    pub fn register(&mut self, name: &str, handler: Arc<dyn Handler>) {
        self.by_name.insert(name.to_string(), handler);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn Handler>> {
        self.by_name.get(name).cloned()
    }

    pub fn names(&self) -> BTreeSet<String> {
        self.by_name.keys().cloned().collect()
    }
}

/// `echo` — completes immediately with its argument.
struct Echo;
impl Handler for Echo {
    fn step(&self, ctx: &mut HandlerCtx) -> HandlerStep {
        HandlerStep::Complete(ctx.arg.to_vec())
    }
}

/// `busy` — pure compute; the cost is the declared service time.
struct Busy;
impl Handler for Busy {
    fn step(&self, _ctx: &mut HandlerCtx) -> HandlerStep {
        HandlerStep::Complete(Vec::new())
    }
}

/// `fail` — always fails; exercises failure triggers and error paths.
struct AlwaysFail;
impl Handler for AlwaysFail {
    fn step(&self, _ctx: &mut HandlerCtx) -> HandlerStep {
        HandlerStep::Fail("requested failure".to_string())
    }
}

/// Argument conventions for the storage built-ins, encoded as records.
pub mod args {
    use super::*;

    pub fn put(attr: &str, value: &[u8]) -> Vec<u8> {
        RecordWriter::new().str(attr).bytes(value).finish()
    }

    pub fn get(attr: &str) -> Vec<u8> {
        RecordWriter::new().str(attr).finish()
    }

    pub fn del(attr: &str) -> Vec<u8> {
        RecordWriter::new().str(attr).finish()
    }

    pub fn incr(attr: &str, by: u64) -> Vec<u8> {
        RecordWriter::new().str(attr).u64(by).finish()
    }

    pub fn map_put(attr: &str, field: &[u8], value: &[u8]) -> Vec<u8> {
        RecordWriter::new().str(attr).bytes(field).bytes(value).finish()
    }

    pub fn copy(src_attr: &str, dst_attr: &str) -> Vec<u8> {
        RecordWriter::new().str(src_attr).str(dst_attr).finish()
    }

    pub fn relay(class: &str, instance: u64, function: &str, arg: &[u8]) -> Vec<u8> {
        RecordWriter::new()
            .str(class)
            .u64(instance)
            .str(function)
            .bytes(arg)
            .finish()
    }
}

/// `put attr value` — set a scalar attribute.
struct Put;
impl Handler for Put {
    fn step(&self, ctx: &mut HandlerCtx) -> HandlerStep {
        match ctx.step {
            0 => {
                let mut r = RecordReader::new(ctx.arg);
                let Ok(attr) = r.str() else {
                    return HandlerStep::Fail("put: bad argument".into());
                };
                let Ok(value) = r.bytes() else {
                    return HandlerStep::Fail("put: bad argument".into());
                };
                HandlerStep::Commit {
                    attr: attr.to_string(),
                    op: WriteOp::RegisterSet(value.to_vec()),
                    then: 1,
                }
            }
            _ => HandlerStep::Complete(Vec::new()),
        }
    }
}

/// `get attr` — read an attribute and return its raw value.
struct Get;
impl Handler for Get {
    fn step(&self, ctx: &mut HandlerCtx) -> HandlerStep {
        match ctx.step {
            0 => {
                let mut r = RecordReader::new(ctx.arg);
                let Ok(attr) = r.str() else {
                    return HandlerStep::Fail("get: bad argument".into());
                };
                HandlerStep::Refresh { attr: attr.to_string(), then: 1 }
            }
            _ => HandlerStep::Complete(ctx.reply.to_vec()),
        }
    }
}

/// `del attr` — clear a scalar attribute.
struct Del;
impl Handler for Del {
    fn step(&self, ctx: &mut HandlerCtx) -> HandlerStep {
        match ctx.step {
            0 => {
                let mut r = RecordReader::new(ctx.arg);
                let Ok(attr) = r.str() else {
                    return HandlerStep::Fail("del: bad argument".into());
                };
                HandlerStep::Commit {
                    attr: attr.to_string(),
                    op: WriteOp::RegisterClear,
                    then: 1,
                }
            }
            _ => HandlerStep::Complete(Vec::new()),
        }
    }
}

/// `incr attr by` — bump a counter attribute.
struct Incr;
impl Handler for Incr {
    fn step(&self, ctx: &mut HandlerCtx) -> HandlerStep {
        match ctx.step {
            0 => {
                let mut r = RecordReader::new(ctx.arg);
                let (Ok(attr), Ok(by)) = (r.str().map(str::to_string), r.u64()) else {
                    return HandlerStep::Fail("incr: bad argument".into());
                };
                HandlerStep::Commit { attr, op: WriteOp::CounterAdd(by), then: 1 }
            }
            _ => HandlerStep::Complete(Vec::new()),
        }
    }
}

/// `map_put attr field value` — set one field of a map attribute.
struct MapPut;
impl Handler for MapPut {
    fn step(&self, ctx: &mut HandlerCtx) -> HandlerStep {
        match ctx.step {
            0 => {
                let mut r = RecordReader::new(ctx.arg);
                let (Ok(attr), Ok(field), Ok(value)) =
                    (r.str().map(str::to_string), r.bytes().map(<[u8]>::to_vec), r.bytes())
                else {
                    return HandlerStep::Fail("map_put: bad argument".into());
                };
                HandlerStep::Commit {
                    attr,
                    op: WriteOp::MapPut(field, value.to_vec()),
                    then: 1,
                }
            }
            _ => HandlerStep::Complete(Vec::new()),
        }
    }
}

/// `copy src dst` — read one attribute, write its value to another:
/// the smallest read-modify-write chain.
struct Copy;
impl Handler for Copy {
    fn step(&self, ctx: &mut HandlerCtx) -> HandlerStep {
        let mut r = RecordReader::new(ctx.arg);
        let (Ok(src), Ok(dst)) = (r.str().map(str::to_string), r.str().map(str::to_string))
        else {
            return HandlerStep::Fail("copy: bad argument".into());
        };
        match ctx.step {
            0 => HandlerStep::Refresh { attr: src, then: 1 },
            1 => HandlerStep::Commit {
                attr: dst,
                op: WriteOp::RegisterSet(ctx.reply.to_vec()),
                then: 2,
            },
            _ => HandlerStep::Complete(Vec::new()),
        }
    }
}

/// `relay class instance function arg` — call another object's function
/// and return its result.
struct Relay;
impl Handler for Relay {
    fn step(&self, ctx: &mut HandlerCtx) -> HandlerStep {
        match ctx.step {
            0 => {
                let mut r = RecordReader::new(ctx.arg);
                let (Ok(class), Ok(instance), Ok(function), Ok(arg)) = (
                    r.str().map(str::to_string),
                    r.u64(),
                    r.str().map(str::to_string),
                    r.bytes(),
                ) else {
                    return HandlerStep::Fail("relay: bad argument".into());
                };
                HandlerStep::Invoke { class, instance, function, arg: arg.to_vec(), then: 1 }
            }
            _ => HandlerStep::Complete(ctx.reply.to_vec()),
        }
    }
}
