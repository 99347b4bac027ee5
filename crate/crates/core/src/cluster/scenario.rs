//! Declarative scenario files: one TOML document describing a complete
//! simulation run — sites, class definitions, workloads, and scripted
//! faults — so the same experiment can be replayed from the command line
//! or from tests without writing any Rust.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::engine::{Cluster, ClusterError};
use crate::cluster::workload::WorkloadSpec;
use crate::model::{ClassDefinition, DatacenterProfile};
use crate::sim::SimTime;

/// A scripted partition: traffic between different groups drops for the
/// duration of the window; traffic within a group is unaffected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub start_ms: SimTime,
    pub duration_ms: u64,
    /// Site names, one list per side of the cut.
    pub groups: Vec<Vec<String>>,
}

/// A scripted permanent site loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteFailureSpec {
    pub at_ms: SimTime,
    pub site: String,
}

fn default_seed() -> u64 {
    1
}

fn default_intra_latency() -> u64 {
    1
}

fn default_jitter() -> [u64; 2] {
    [0, 2]
}

/// A complete, self-contained experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Virtual run length; the simulation stops once the clock passes it.
    pub horizon_ms: SimTime,
    /// One-way latency between objects on the same site.
    #[serde(default = "default_intra_latency")]
    pub intra_latency_ms: u64,
    /// Uniform per-message jitter range added on top of base latency.
    #[serde(default = "default_jitter")]
    pub jitter_ms: [u64; 2],
    pub datacenters: Vec<DatacenterProfile>,
    /// Classes deployed at time zero, in order.
    pub classes: Vec<ClassDefinition>,
    /// Parent classes available for inheritance but not deployed themselves.
    #[serde(default)]
    pub templates: Vec<ClassDefinition>,
    #[serde(default)]
    pub workloads: Vec<WorkloadSpec>,
    #[serde(default)]
    pub partitions: Vec<PartitionSpec>,
    #[serde(default)]
    pub site_failures: Vec<SiteFailureSpec>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Scenario, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    /// Build the cluster this scenario describes: sites, deployed classes,
    /// workloads, and scripted faults, all scheduled and ready to run.
    /// `seed_override` replaces the file's seed when given.
    pub fn build(&self, seed_override: Option<u64>) -> Result<Cluster, ScenarioError> {
        let seed = seed_override.unwrap_or(self.seed);
        let mut cluster = Cluster::new(
            self.datacenters.clone(),
            seed,
            self.intra_latency_ms,
            (self.jitter_ms[0], self.jitter_ms[1]),
        )?;
        // Make every definition visible before validating any, so parents
        // resolve regardless of declaration order.
        for def in self.templates.iter().chain(&self.classes) {
            cluster.add_definition(def.clone());
        }
        for def in &self.classes {
            cluster.deploy(def)?;
        }
        for w in &self.workloads {
            cluster.add_workload(w.clone())?;
        }
        for p in &self.partitions {
            let groups: Vec<Vec<&str>> = p
                .groups
                .iter()
                .map(|g| g.iter().map(String::as_str).collect())
                .collect();
            let refs: Vec<&[&str]> = groups.iter().map(Vec::as_slice).collect();
            cluster.script_partition(p.start_ms, &refs, p.duration_ms)?;
        }
        for f in &self.site_failures {
            cluster.script_site_failure(f.at_ms, &f.site)?;
        }
        Ok(cluster)
    }

    /// Build and run to the horizon; returns the finished cluster for
    /// inspection and export.
    pub fn run(&self, seed_override: Option<u64>) -> Result<Cluster, ScenarioError> {
        let mut cluster = self.build(seed_override)?;
        cluster.run_until(self.horizon_ms);
        Ok(cluster)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::metrics::OpResult;

    const DEMO: &str = r#"
name = "demo"
seed = 9
horizon_ms = 3000

[[datacenters]]
id = "edge-a"
tier = "edge"
capacity = 8
failure_prob = 0.01

[datacenters.region_latency]
"cloud-a" = 12

[[datacenters]]
id = "cloud-a"
tier = "cloud"
capacity = 32
failure_prob = 0.001

[datacenters.region_latency]
"edge-a" = 12

[[classes]]
name = "greeter"

[classes.class_sla]
consistency = "read_your_write"
availability = 0.99

[[classes.functions]]
name = "hello"
handler = "echo"
mean_service_ms = 2.0

[[workloads]]
name = "steady"
class = "greeter"
gateway = "edge-a"
kind = "fixed_rate"
rps = 10
function = "hello"
instances = 1
stop_ms = 2000

[workloads.arg]
kind = "empty"
"#;

    #[test]
    fn parses_builds_and_runs() {
        let sc = Scenario::from_toml_str(DEMO).unwrap();
        assert_eq!(sc.name, "demo");
        assert_eq!(sc.seed, 9);
        assert_eq!(sc.jitter_ms, [0, 2]);
        let c = sc.run(None).unwrap();
        assert_eq!(c.metrics.ops.len(), 20);
        assert!(c.metrics.ops.iter().all(|o| o.result.is_ok()));
    }

    #[test]
    fn seed_override_changes_schedule() {
        let sc = Scenario::from_toml_str(DEMO).unwrap();
        let a = sc.run(None).unwrap();
        let b = sc.run(Some(9)).unwrap();
        let sig = |c: &Cluster| {
            c.metrics
                .ops
                .iter()
                .map(|o| (o.req, o.finished_ms, matches!(o.result, OpResult::Done(_))))
                .collect::<Vec<_>>()
        };
        assert_eq!(sig(&a), sig(&b), "explicit seed equal to the file seed");
    }

    #[test]
    fn faults_round_trip_through_toml() {
        let mut sc = Scenario::from_toml_str(DEMO).unwrap();
        sc.partitions.push(PartitionSpec {
            start_ms: 500,
            duration_ms: 400,
            groups: vec![vec!["edge-a".into()], vec!["cloud-a".into()]],
        });
        sc.site_failures.push(SiteFailureSpec {
            at_ms: 2_500,
            site: "edge-a".into(),
        });
        let text = sc.to_toml_string();
        let back = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(sc, back);
        // The partition window must cost some ops (requests cross the cut).
        let c = back.run(None).unwrap();
        let failed = c.metrics.ops.iter().filter(|o| !o.result.is_ok()).count();
        assert!(failed > 0, "a 400 ms cut should fail at least one op");
    }
}
