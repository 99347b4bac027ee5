//! Function execution: named handlers and per-site worker capacity.

pub mod handler;
pub mod pool;

pub use handler::{args, Handler, HandlerCtx, HandlerRegistry, HandlerStep};
pub use pool::{
    slots_for_rate, Admission, Lane, ReserveError, SitePool, COLD_START_MS, QUEUE_FACTOR,
    SCALE_PERIOD_MS,
};
