//! Whole-system assembly: a deployed set of classes, their replicas, the
//! worker pools, and the client workloads, all driven by one deterministic
//! event loop over the simulated network.
//!
//! Submodules:
//!
//! - [`msg`] — the object-plane wire protocol (requests and replies).
//! - [`metrics`] — per-operation records and per-second series collected
//!   during a run.
//! - [`workload`] — declarative client traffic shapes.
//! - [`scenario`] — whole-run TOML descriptions (sites, classes, faults).
//! - [`report`] — per-second aggregated views of a finished run.
//! - [`engine`] — the [`Cluster`] itself.

pub mod engine;
pub mod metrics;
pub mod msg;
pub mod report;
pub mod scenario;
pub mod workload;

pub use engine::{
    Cluster, ClusterError, Ev, Placement, AE_IDLE_ABORT_MS, AE_RETRY_MS, CHILD_TIMEOUT_MS,
    CLIENT_OP_TIMEOUT_MS, DEFAULT_SYNC_DELTA_MS, REDIRECT_HOPS_MAX, TRIGGER_DEPTH_MAX,
};
pub use metrics::{
    counter_value, p50, parse_counter, ClassSecond, FnSecond, Metrics, OpKind, OpRecord, OpResult,
};
pub use msg::{ObjMsg, OpError, Outcome};
pub use report::{render_csv, render_json, Report, ReportRow};
pub use scenario::{PartitionSpec, Scenario, ScenarioError, SiteFailureSpec};
pub use workload::{ArgSpec, WorkloadKind, WorkloadSpec};
