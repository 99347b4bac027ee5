//! Site failure estimation: an exponentially weighted moving average over
//! health probes.
//!
//! Each control site keeps one estimator per datacenter, seeded from the
//! profile's long-run failure probability and updated once per probe. The
//! estimate is clamped away from 0 and 1 so replica-count planning never
//! divides certainty out of the math: a site that has never failed is
//! still not perfectly reliable, and a dead one may come back.

/// Weight of the newest observation.
pub const EWMA_ALPHA: f64 = 0.2;
/// Estimates are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FailureEstimator {
    prob: f64,
}

impl FailureEstimator {
    pub fn new(initial: f64) -> FailureEstimator {
        FailureEstimator { prob: clamp(initial) }
    }

    /// Fold in one probe outcome: `failed` is true when the site did not
    /// answer in time.
    pub fn observe(&mut self, failed: bool) {
        let x = if failed { 1.0 } else { 0.0 };
        self.prob = clamp(EWMA_ALPHA * x + (1.0 - EWMA_ALPHA) * self.prob);
    }

    pub fn prob(&self) -> f64 {
        self.prob
    }
}

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}
