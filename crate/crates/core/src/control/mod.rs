//! Control plane: failure estimation, replica planning, and SLA
//! enforcement.

pub mod estimator;
pub mod monitor;
pub mod plan;

pub use estimator::{FailureEstimator, EWMA_ALPHA};
pub use monitor::{
    Correction, Dimension, MonitorAction, PeriodSample, SlaMonitor, BREACH_STREAK,
    MAX_CORRECTION_ATTEMPTS, MONITOR_PERIOD_MS,
};
pub use plan::{
    availability_of, place_class, plan_placement, replication_factor, split_throughput, PlanError,
};
