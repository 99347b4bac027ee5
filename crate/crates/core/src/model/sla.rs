//! SLA vocabulary: consistency modes, availability targets, throughput
//! floors and locality preferences, plus the partial-override merge used by
//! class members.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Consistency mode of an attribute (or the class default).
///
/// `BoundedStaleness` carries its window in milliseconds; scenario files
/// write it in seconds and the loader converts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Consistency {
    /// Linearizable reads and writes through consensus.
    Strong,
    /// Reads may trail writes by at most `delta_ms`.
    BoundedStaleness { delta_ms: u64 },
    /// Read-your-write session guarantees; cross-session staleness unbounded.
    ReadYourWrite,
}

impl Consistency {
    /// Short stable label used in reports and topic-free contexts.
    pub fn mode_name(&self) -> &'static str {
        match self {
            Consistency::Strong => "strong",
            Consistency::BoundedStaleness { .. } => "bounded_staleness",
            Consistency::ReadYourWrite => "ryw",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SlaError {
    #[error("availability must be in [0, 1), got {0}")]
    AvailabilityOutOfRange(f64),
    #[error("bounded staleness window must be positive")]
    NonPositiveDelta,
    #[error("throughput floor must be at least 1 rps when present")]
    ZeroThroughput,
    #[error("locality list must not be empty when present")]
    EmptyLocality,
}

/// A complete SLA: every dimension resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlaSpec {
    pub consistency: Consistency,
    /// Probability the object is reachable, in `[0, 1)`. Drives the replica
    /// count chosen by placement.
    pub availability: f64,
    /// Requests-per-second floor; reserves worker slots when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput: Option<u64>,
    /// Ordered datacenter preference; when present, placement and execution
    /// are constrained to these sites first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locality: Option<Vec<String>>,
}

impl SlaSpec {
    pub fn validate(&self) -> Result<(), SlaError> {
        if !(0.0..1.0).contains(&self.availability) {
            return Err(SlaError::AvailabilityOutOfRange(self.availability));
        }
        if let Consistency::BoundedStaleness { delta_ms } = self.consistency {
            if delta_ms == 0 {
                return Err(SlaError::NonPositiveDelta);
            }
        }
        if self.throughput == Some(0) {
            return Err(SlaError::ZeroThroughput);
        }
        if let Some(l) = &self.locality {
            if l.is_empty() {
                return Err(SlaError::EmptyLocality);
            }
        }
        Ok(())
    }
}

/// Partial SLA attached to a single attribute or function. Fields left
/// `None` inherit from the class default; the merge never invents values
/// absent from both sides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SlaOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency: Option<Consistency>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub availability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locality: Option<Vec<String>>,
}

impl SlaOverride {
    /// Field-wise merge: override wins where set, class default otherwise.
    pub fn resolve(&self, class_sla: &SlaSpec) -> SlaSpec {
        SlaSpec {
            consistency: self
                .consistency
                .clone()
                .unwrap_or_else(|| class_sla.consistency.clone()),
            availability: self.availability.unwrap_or(class_sla.availability),
            throughput: self.throughput.or(class_sla.throughput),
            locality: self.locality.clone().or_else(|| class_sla.locality.clone()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self == &SlaOverride::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> SlaSpec {
        SlaSpec {
            consistency: Consistency::Strong,
            availability: 0.999,
            throughput: Some(10_000),
            locality: None,
        }
    }

    #[test]
    fn override_merges_field_wise() {
        // A function that only pins locality keeps the class throughput floor.
        let ov = SlaOverride {
            locality: Some(vec!["edge-dc".into()]),
            ..Default::default()
        };
        let eff = ov.resolve(&base());
        assert_eq!(eff.throughput, Some(10_000));
        assert_eq!(eff.locality.as_deref(), Some(&["edge-dc".to_string()][..]));
        assert_eq!(eff.consistency, Consistency::Strong);
    }

    #[test]
    fn override_never_synthesizes() {
        let eff = SlaOverride::default().resolve(&SlaSpec {
            consistency: Consistency::ReadYourWrite,
            availability: 0.0,
            throughput: None,
            locality: None,
        });
        assert_eq!(eff.throughput, None);
        assert_eq!(eff.locality, None);
    }

    #[test]
    fn availability_bounds() {
        let mut s = base();
        s.availability = 1.0;
        assert_eq!(
            s.validate(),
            Err(SlaError::AvailabilityOutOfRange(1.0)),
            "availability of exactly 1.0 is unsatisfiable with finite replicas"
        );
        s.availability = 0.0;
        assert!(s.validate().is_ok());
    }

    #[test]
    fn delta_must_be_positive() {
        let mut s = base();
        s.consistency = Consistency::BoundedStaleness { delta_ms: 0 };
        assert_eq!(s.validate(), Err(SlaError::NonPositiveDelta));
    }

    #[test]
    fn throughput_floor_of_zero_rejected() {
        let mut s = base();
        s.throughput = Some(0);
        assert_eq!(s.validate(), Err(SlaError::ZeroThroughput));
    }
}
