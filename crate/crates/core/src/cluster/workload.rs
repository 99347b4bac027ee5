//! Workload shapes driven against a cluster: session loops, closed-loop
//! mixes, and open-loop fixed-rate streams.

use serde::{Deserialize, Serialize};

/// Argument template for fixed-rate invocations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ArgSpec {
    /// Empty argument (echo, busy, fail …).
    Empty,
    /// `put attr <monotone-counter>` per instance.
    PutCounter { attr: String },
    /// `get attr`.
    Get { attr: String },
    /// `incr attr 1`.
    Incr { attr: String },
    /// `relay` to `function` on another object, returning its reply.
    Relay { class: String, instance: u64, function: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WorkloadKind {
    /// Closed-loop clients, one read-your-write session each, working a
    /// private object: write, then `reads_per_write` reads, repeat.
    Sessions {
        clients: u32,
        think_ms: u64,
        attr: String,
        write_function: String,
        read_function: String,
        reads_per_write: u32,
    },
    /// Closed-loop clients without sessions, mixing reads and writes over
    /// a shared pool of instances.
    ClosedLoop {
        clients: u32,
        think_ms: u64,
        attr: String,
        write_function: String,
        read_function: String,
        /// Percentage of ops that are reads, 0–100.
        read_pct: u8,
        instances: u64,
    },
    /// Open-loop arrivals at a fixed rate, spread evenly across sim-ms.
    FixedRate {
        rps: u64,
        function: String,
        arg: ArgSpec,
        instances: u64,
    },
}

/// One stream of traffic entering at a single gateway.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub name: String,
    pub class: String,
    /// Datacenter id whose gateway the clients talk to.
    pub gateway: String,
    #[serde(flatten)]
    pub kind: WorkloadKind,
    #[serde(default)]
    pub start_ms: u64,
    pub stop_ms: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let spec = WorkloadSpec {
            name: "carts".into(),
            class: "cart".into(),
            gateway: "edge-1".into(),
            kind: WorkloadKind::Sessions {
                clients: 20,
                think_ms: 50,
                attr: "state".into(),
                write_function: "set".into(),
                read_function: "show".into(),
                reads_per_write: 2,
            },
            start_ms: 1000,
            stop_ms: 60_000,
        };
        let text = toml::to_string(&spec).unwrap();
        let back: WorkloadSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn fixed_rate_parses_from_literal_toml() {
        let text = r#"
            name = "flood"
            class = "video"
            gateway = "edge-2"
            kind = "fixed_rate"
            rps = 4000
            function = "frame"
            stop_ms = 30000
            instances = 4

            [arg]
            kind = "empty"
        "#;
        let spec: WorkloadSpec = toml::from_str(text).unwrap();
        match spec.kind {
            WorkloadKind::FixedRate { rps, ref function, ref arg, instances } => {
                assert_eq!(rps, 4000);
                assert_eq!(function, "frame");
                assert_eq!(*arg, ArgSpec::Empty);
                assert_eq!(instances, 4);
            }
            ref other => panic!("wrong kind {other:?}"),
        }
    }
}
