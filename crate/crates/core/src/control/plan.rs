//! Capacity planning: how many replicas a class needs, where they go, and
//! how a throughput floor is split across the chosen sites.

use thiserror::Error;

use crate::model::DatacenterProfile;
use crate::sim::DcIndex;

/// Slack applied to availability comparisons so targets written in decimal
/// (0.9999, …) are not missed by one bit of rounding.
const AVAIL_SLACK: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("availability target {target} unreachable with {sites} usable sites")]
    TargetUnreachable { target: f64, sites: usize },
    #[error("need {need} replica sites but only {usable} are usable")]
    NotEnoughSites { need: usize, usable: usize },
    #[error("locality names unknown datacenter {0}")]
    UnknownLocality(String),
}

/// Availability of an object replicated on sites with the given
/// independent failure probabilities: it is lost only when all fail.
pub fn availability_of(failure_probs: &[f64]) -> f64 {
    1.0 - failure_probs.iter().product::<f64>()
}

/// Smallest number of replicas meeting `target` availability, assuming
/// placement may pick the most reliable sites first.
///
/// Sites fail independently, so the best choice of `k` sites is the `k`
/// smallest failure probabilities and availability is one minus their
/// product. Returns an error when even every site together falls short.
pub fn replication_factor(failure_probs: &[f64], target: f64) -> Result<usize, PlanError> {
    let mut sorted: Vec<f64> = failure_probs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut prod = 1.0;
    for (i, p) in sorted.iter().enumerate() {
        prod *= p;
        if 1.0 - prod >= target - AVAIL_SLACK {
            return Ok(i + 1);
        }
    }
    Err(PlanError::TargetUnreachable { target, sites: failure_probs.len() })
}

/// Choose `k` replica sites for a class.
///
/// Sites named by the locality preference are taken first, in the stated
/// order. Remaining slots are filled from the other usable sites by
/// estimated reliability, with ties rotated by `rotation` so co-tenant
/// classes with identical constraints spread instead of piling onto one
/// site. Dead sites never qualify; locality entries must at least name
/// real datacenters.
pub fn place_class(
    k: usize,
    locality: Option<&[String]>,
    profiles: &[DatacenterProfile],
    estimates: &[f64],
    usable: &dyn Fn(DcIndex) -> bool,
    rotation: usize,
) -> Result<Vec<DcIndex>, PlanError> {
    assert_eq!(profiles.len(), estimates.len());
    let mut chosen: Vec<DcIndex> = Vec::with_capacity(k);
    if let Some(pref) = locality {
        for id in pref {
            let Some(pos) = profiles.iter().position(|p| &p.id == id) else {
                return Err(PlanError::UnknownLocality(id.clone()));
            };
            let dc = DcIndex(pos as u16);
            if chosen.len() < k && usable(dc) && !chosen.contains(&dc) {
                chosen.push(dc);
            }
        }
    }
    let n = profiles.len();
    let mut rest: Vec<DcIndex> = (0..n as u16)
        .map(DcIndex)
        .filter(|dc| usable(*dc) && !chosen.contains(dc))
        .collect();
    rest.sort_by(|a, b| {
        estimates[a.0 as usize]
            .total_cmp(&estimates[b.0 as usize])
            .then_with(|| {
                let ra = (a.0 as usize + n - rotation % n) % n;
                let rb = (b.0 as usize + n - rotation % n) % n;
                ra.cmp(&rb)
            })
    });
    chosen.extend(rest.into_iter().take(k - chosen.len()));
    if chosen.len() < k {
        return Err(PlanError::NotEnoughSites { need: k, usable: chosen.len() });
    }
    Ok(chosen)
}

/// Choose replica sites meeting an availability target under a locality
/// preference.
///
/// Locality changes the answer [`replication_factor`] alone would give:
/// preferred sites are seated first even when they are the least reliable,
/// so the replica count must be judged against the sites actually chosen,
/// not the best ones available. This grows `k` until the chosen set meets
/// the target (each added replica strictly raises availability, so the
/// search is monotone) and fails only when every usable site together
/// still falls short.
pub fn plan_placement(
    target: f64,
    locality: Option<&[String]>,
    profiles: &[DatacenterProfile],
    estimates: &[f64],
    usable: &dyn Fn(DcIndex) -> bool,
    rotation: usize,
) -> Result<Vec<DcIndex>, PlanError> {
    let n_usable = (0..profiles.len() as u16)
        .filter(|i| usable(DcIndex(*i)))
        .count();
    for k in 1..=n_usable {
        let chosen = place_class(k, locality, profiles, estimates, usable, rotation)?;
        let probs: Vec<f64> = chosen.iter().map(|dc| estimates[dc.0 as usize]).collect();
        if availability_of(&probs) >= target - AVAIL_SLACK {
            return Ok(chosen);
        }
    }
    Err(PlanError::TargetUnreachable {
        target,
        sites: n_usable,
    })
}

/// Split a throughput floor across replica sites in proportion to their
/// worker capacity, rounding each share up so the sum never undershoots
/// the floor.
pub fn split_throughput(total_rps: u64, capacities: &[u32]) -> Vec<u64> {
    let total_cap: u64 = capacities.iter().map(|c| *c as u64).sum();
    if total_cap == 0 {
        return vec![0; capacities.len()];
    }
    capacities
        .iter()
        .map(|c| (total_rps as u128 * *c as u128).div_ceil(total_cap as u128) as u64)
        .collect()
}
