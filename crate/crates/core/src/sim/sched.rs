//! Virtual clock and event queue.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use thiserror::Error;

/// Milliseconds since scenario start.
pub type SimTime = u64;

/// Opaque identifier of a scheduled event.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EventHandle(pub u64);

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("cannot schedule at {at} ms: clock already at {now} ms")]
    PastTimestamp { at: SimTime, now: SimTime },
}

#[derive(PartialEq, Eq)]
struct Entry<E> {
    at: SimTime,
    seq: u64,
    ev: E,
}

// Ordering on (at, seq) only; the payload never participates.
impl<E: Eq> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

impl<E: Eq> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-queue event loop state: the current virtual time plus the pending
/// event set. `pop` advances the clock to the event it returns; time never
/// moves backwards and ties break in FIFO order.
pub struct Scheduler<E> {
    now: SimTime,
    seq: u64,
    heap: BinaryHeap<Reverse<Entry<E>>>,
}

impl<E: Eq> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler { now: 0, seq: 0, heap: BinaryHeap::new() }
    }

    /// Current virtual time in ms.
    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Queue `ev` to fire at `at` (which may equal `now`; same-time events
    /// fire after everything already queued for that timestamp).
    pub fn schedule(&mut self, at: SimTime, ev: E) -> Result<EventHandle, SchedulerError> {
        if at < self.now {
            return Err(SchedulerError::PastTimestamp { at, now: self.now });
        }
        let seq = self.seq;
        self.seq += 1;
        self.heap.push(Reverse(Entry { at, seq, ev }));
        Ok(EventHandle(seq))
    }

    /// Remove and return the next event, advancing the clock to its
    /// timestamp. Returns `None` when the queue is empty.
    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        let Reverse(e) = self.heap.pop()?;
        debug_assert!(e.at >= self.now);
        self.now = e.at;
        Some((e.at, e.ev))
    }

    /// Timestamp of the next pending event, if any.
    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse(e)| e.at)
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }
}

impl<E: Eq> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}
