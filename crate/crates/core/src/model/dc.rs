//! Datacenter profiles: tier, worker capacity, long-run failure probability
//! and the symmetric one-way latency map.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Edge,
    Cloud,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatacenterProfile {
    pub id: String,
    pub tier: Tier,
    /// Worker slots available to runtimes in this datacenter.
    pub capacity: u32,
    /// Long-run probability that this site is unavailable, in `(0, 1)`.
    pub failure_prob: f64,
    /// One-way latency in ms to every *other* datacenter. Must mirror the
    /// peer's entry exactly.
    #[serde(default)]
    pub region_latency: BTreeMap<String, u64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("datacenter {0}: capacity must be at least 1")]
    ZeroCapacity(String),
    #[error("datacenter {0}: failure probability must be in (0, 1), got {1}")]
    FailureProbOutOfRange(String, f64),
    #[error("duplicate datacenter id {0}")]
    DuplicateId(String),
    #[error("latency between {a} and {b} is asymmetric or missing ({ab:?} vs {ba:?})")]
    AsymmetricLatency {
        a: String,
        b: String,
        ab: Option<u64>,
        ba: Option<u64>,
    },
}

/// Validate a profile set: ids unique, bounds respected, latency map
/// symmetric and complete across every pair.
pub fn validate_profiles(profiles: &[DatacenterProfile]) -> Result<(), ProfileError> {
    let mut ids = BTreeMap::new();
    for p in profiles {
        if ids.insert(p.id.clone(), p).is_some() {
            return Err(ProfileError::DuplicateId(p.id.clone()));
        }
        if p.capacity == 0 {
            return Err(ProfileError::ZeroCapacity(p.id.clone()));
        }
        if !(p.failure_prob > 0.0 && p.failure_prob < 1.0) {
            return Err(ProfileError::FailureProbOutOfRange(p.id.clone(), p.failure_prob));
        }
    }
    for a in profiles {
        for b in profiles {
            if a.id >= b.id {
                continue;
            }
            let ab = a.region_latency.get(&b.id).copied();
            let ba = b.region_latency.get(&a.id).copied();
            if ab.is_none() || ab != ba {
                return Err(ProfileError::AsymmetricLatency {
                    a: a.id.clone(),
                    b: b.id.clone(),
                    ab,
                    ba,
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dc(id: &str, lat: &[(&str, u64)]) -> DatacenterProfile {
        DatacenterProfile {
            id: id.into(),
            tier: Tier::Edge,
            capacity: 8,
            failure_prob: 0.05,
            region_latency: lat.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    #[test]
    fn symmetric_pair_accepted() {
        let profiles = vec![dc("a", &[("b", 17)]), dc("b", &[("a", 17)])];
        assert!(validate_profiles(&profiles).is_ok());
    }

    #[test]
    fn asymmetric_latency_rejected() {
        let profiles = vec![dc("a", &[("b", 17)]), dc("b", &[("a", 20)])];
        assert!(matches!(
            validate_profiles(&profiles),
            Err(ProfileError::AsymmetricLatency { .. })
        ));
    }

    #[test]
    fn missing_latency_entry_rejected() {
        let profiles = vec![dc("a", &[("b", 17)]), dc("b", &[])];
        assert!(matches!(
            validate_profiles(&profiles),
            Err(ProfileError::AsymmetricLatency { .. })
        ));
    }

    #[test]
    fn failure_prob_bounds() {
        let mut profiles = vec![dc("a", &[])];
        profiles[0].failure_prob = 0.0;
        assert!(matches!(
            validate_profiles(&profiles),
            Err(ProfileError::FailureProbOutOfRange(..))
        ));
        profiles[0].failure_prob = 1.0;
        assert!(matches!(
            validate_profiles(&profiles),
            Err(ProfileError::FailureProbOutOfRange(..))
        ));
    }
}
