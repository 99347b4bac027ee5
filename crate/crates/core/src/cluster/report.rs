//! Per-second views of a finished run — committed throughput, failures,
//! median latency, and replication health — exportable as CSV or JSON.
//! Row order is fully determined by the metrics maps, so the same run
//! always renders byte-identically.

use serde::Serialize;

use crate::cluster::metrics::{p50, Metrics};

/// One function's traffic and its class's health during one second.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub t_sec: u64,
    /// `class/function`.
    pub function: String,
    pub committed: u64,
    pub failed: u64,
    /// Median gateway-observed latency of committed ops, 0 when none.
    pub latency_p50_ms: u64,
    /// Worst replica lag the monitor saw for the class in this second.
    pub staleness_max_ms: u64,
    pub replica_count: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn from_metrics(scenario: &str, seed: u64, metrics: &Metrics) -> Report {
        let rows = metrics
            .fn_seconds
            .iter()
            .map(|((sec, class_fn), bucket)| {
                let class = class_fn.split('/').next().unwrap_or(class_fn);
                let health = metrics.class_seconds.get(&(*sec, class.to_string()));
                ReportRow {
                    t_sec: *sec,
                    function: class_fn.clone(),
                    committed: bucket.committed,
                    failed: bucket.failed,
                    latency_p50_ms: p50(&bucket.latencies),
                    staleness_max_ms: health.map_or(0, |h| h.staleness_max_ms),
                    replica_count: health.map_or(0, |h| h.replica_count),
                }
            })
            .collect();
        Report {
            scenario: scenario.to_string(),
            seed,
            rows,
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn render_csv(report: &Report) -> String {
    let mut out = String::from(
        "t_sec,function,committed,failed,latency_p50_ms,staleness_max_ms,replica_count\n",
    );
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.t_sec,
            csv_field(&r.function),
            r.committed,
            r.failed,
            r.latency_p50_ms,
            r.staleness_max_ms,
            r.replica_count
        ));
    }
    out
}

pub fn render_json(report: &Report) -> String {
    let mut out = serde_json::to_string_pretty(report).expect("report serializes");
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::metrics::{OpKind, OpRecord, OpResult};
    use crate::cluster::msg::Outcome;

    fn rec(finished_ms: u64, ok: bool) -> OpRecord {
        OpRecord {
            req: finished_ms,
            client: 0,
            class: "cart".into(),
            function: "add".into(),
            instance: 1,
            session: 0,
            gateway: 0,
            issued_ms: finished_ms.saturating_sub(7),
            finished_ms,
            result: if ok {
                OpResult::Done(Outcome::Ok(Vec::new()))
            } else {
                OpResult::Timeout
            },
            arrival_ms: 0,
            start_ms: 0,
            kind: OpKind::Write,
            value: 0,
        }
    }

    fn sample_metrics() -> Metrics {
        let mut m = Metrics::default();
        m.record(rec(100, true));
        m.record(rec(200, true));
        m.record(rec(300, false));
        m.record(rec(1_500, true));
        m.class_seconds
            .entry((0, "cart".into()))
            .or_default()
            .staleness_max_ms = 42;
        m.class_seconds.entry((0, "cart".into())).or_default().replica_count = 3;
        m
    }

    #[test]
    fn csv_is_exact_and_stable() {
        let m = sample_metrics();
        let r = Report::from_metrics("demo", 5, &m);
        let expected = "\
t_sec,function,committed,failed,latency_p50_ms,staleness_max_ms,replica_count
0,cart/add,2,1,7,42,3
1,cart/add,1,0,7,0,0
";
        assert_eq!(render_csv(&r), expected);
        let again = Report::from_metrics("demo", 5, &sample_metrics());
        assert_eq!(render_csv(&again), expected);
    }

    #[test]
    fn json_round_trips_row_values() {
        let m = sample_metrics();
        let r = Report::from_metrics("demo", 5, &m);
        let text = render_json(&r);
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed["scenario"], "demo");
        assert_eq!(parsed["seed"], 5);
        assert_eq!(parsed["rows"][0]["function"], "cart/add");
        assert_eq!(parsed["rows"][0]["committed"], 2);
        assert_eq!(parsed["rows"][1]["t_sec"], 1);
    }

    #[test]
    fn fields_with_delimiters_are_quoted() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
    }
}
