//! Telemetry rendering.
//!
//! Every series, log stream and trace draws from its own ChaCha stream keyed
//! by `(seed, modality, identity)`, and draws the same number of values
//! whether or not a fault is active. A fault therefore changes only the
//! samples it touches; everything else is identical to the healthy render.
//!
//! Nominal noise is Gaussian clamped to +/-1.5 sigma around each baseline.
//!
//! Fault signatures:
//!
//! | fault            | metrics                                   | spans                           | logs (target pod)        |
//! |------------------|-------------------------------------------|---------------------------------|--------------------------|
//! | CpuStress        | cpu_usage = magnitude                     | -                               | "CPU throttling"         |
//! | MemoryStress     | memory_usage = magnitude                  | -                               | "OOMKilled" if >= 0.95   |
//! | PodFailure       | error_rate = 1, cpu/memory/traffic = 0    | "Service unavailable"           | "connection refused"     |
//! | NetworkDelay     | request_latency += magnitude ms           | duration += magnitude           | slow responses           |
//! | NetworkLoss      | error_rate = magnitude                    | "timeout" (p = magnitude)       | "timeout"                |
//! | NetworkDuplicate | error_rate = magnitude                    | "duplicate ack" (p = magnitude) | "duplicate ack"          |
//! | NetworkCorrupt   | error_rate = magnitude                    | "checksum mismatch" (p = mag.)  | "checksum mismatch"      |
//! | NetworkPartition | error_rate = 1, network_throughput = 0    | "connection refused"            | "connection refused"     |
//! | NetworkBandwidth | node_network_throughput = magnitude MB/s  | cross-node calls += 1000/mag ms | -                        |

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::fault::{FaultSpec, FaultTarget, FaultType};
use super::scenario::EpisodeScenario;
use super::topology::{CallNode, Topology};

pub const SAMPLE_INTERVAL_S: f64 = 15.0;
const NOISE_CLAMP: f64 = 1.5;

pub const POD_METRICS: [&str; 5] = [
    "cpu_usage",
    "memory_usage",
    "error_rate",
    "request_latency",
    "network_throughput",
];
pub const NODE_METRICS: [&str; 3] = [
    "node_cpu_usage",
    "node_memory_usage",
    "node_network_throughput",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub component: String,
    pub metric: String,
    /// `(t, value)` pairs in time order.
    pub samples: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub pod: String,
    pub t: f64,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub trace_id: String,
    pub span_id: String,
    pub parent_span_id: Option<String>,
    pub service: String,
    pub start_s: f64,
    pub duration_ms: f64,
    pub status: SpanStatus,
    pub error_message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub trace_id: String,
    pub route: String,
    pub start_s: f64,
    /// Depth-first pre-order; `spans[0]` is the root.
    pub spans: Vec<Span>,
}

impl Trace {
    pub fn span(&self, id: &str) -> Option<&Span> {
        self.spans.iter().find(|s| s.span_id == id)
    }

    /// `(caller, callee)` service pairs of every non-root span.
    pub fn edges(&self) -> Vec<(String, String)> {
        self.spans
            .iter()
            .filter_map(|s| {
                let p = self.span(s.parent_span_id.as_deref()?)?;
                Some((p.service.clone(), s.service.clone()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub metrics: Vec<MetricSeries>,
    pub logs: Vec<LogLine>,
    pub traces: Vec<Trace>,
}

impl Telemetry {
    /// SHA-256 over the canonical JSON serialization.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("telemetry serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
        let mut out = String::new();
        for item in items {
            out.push_str(&serde_json::to_string(&item).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn metrics_jsonl(&self) -> String {
        Self::jsonl(&self.metrics)
    }

    pub fn logs_jsonl(&self) -> String {
        Self::jsonl(&self.logs)
    }

    /// One span per line.
    pub fn spans_jsonl(&self) -> String {
        Self::jsonl(self.traces.iter().flat_map(|t| &t.spans))
    }
}

/// Nominal level and noise amplitude of one series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricProfile {
    pub baseline: f64,
    pub sigma: f64,
    /// Upper bound for fractions; `None` for unbounded quantities.
    pub max: Option<f64>,
}

impl MetricProfile {
    /// Closed band the nominal samples stay within.
    pub fn nominal_band(&self) -> (f64, f64) {
        let lo = (self.baseline - NOISE_CLAMP * self.sigma).max(0.0);
        let hi = self.baseline + NOISE_CLAMP * self.sigma;
        (lo, self.max.map_or(hi, |m| hi.min(m)))
    }
}

pub fn pod_profile(topo: &Topology, pod: &str, metric: &str) -> Option<MetricProfile> {
    let idx = topo.pods.iter().position(|p| p.id == pod)?;
    let service = &topo.pods[idx].service;
    let k = idx as f64;
    let p = match metric {
        "cpu_usage" => MetricProfile {
            baseline: 0.20 + 0.02 * (idx % 8) as f64,
            sigma: 0.02,
            max: Some(1.0),
        },
        "memory_usage" => MetricProfile {
            baseline: 0.35 + 0.02 * (idx % 8) as f64,
            sigma: 0.015,
            max: Some(1.0),
        },
        "error_rate" => MetricProfile {
            baseline: 0.0,
            sigma: 0.002,
            max: Some(1.0),
        },
        "request_latency" => {
            let inbound: Vec<f64> = topo
                .call_edges
                .iter()
                .filter(|e| &e.to == service)
                .map(|e| e.latency_ms)
                .collect();
            let baseline = if inbound.is_empty() {
                topo.frontend_latency_ms
            } else {
                inbound.iter().sum::<f64>() / inbound.len() as f64
            };
            MetricProfile {
                baseline,
                sigma: 0.04 * baseline,
                max: None,
            }
        }
        "network_throughput" => {
            let baseline = 20.0 + 2.0 * (k % 5.0);
            MetricProfile {
                baseline,
                sigma: 0.04 * baseline,
                max: None,
            }
        }
        _ => return None,
    };
    Some(p)
}

pub fn node_profile(topo: &Topology, node: &str, metric: &str) -> Option<MetricProfile> {
    topo.node(node)?;
    let p = match metric {
        "node_cpu_usage" => MetricProfile {
            baseline: 0.35,
            sigma: 0.02,
            max: Some(1.0),
        },
        "node_memory_usage" => MetricProfile {
            baseline: 0.5,
            sigma: 0.015,
            max: Some(1.0),
        },
        "node_network_throughput" => MetricProfile {
            baseline: 100.0,
            sigma: 3.0,
            max: None,
        },
        _ => return None,
    };
    Some(p)
}

pub(crate) fn stream(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    let mut s = [0u8; 32];
    s.copy_from_slice(&h.finalize());
    ChaCha8Rng::from_seed(s)
}

fn clamped_normal(rng: &mut ChaCha8Rng) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z.clamp(-NOISE_CLAMP, NOISE_CLAMP)
}

pub(crate) fn sample_times(scenario: &EpisodeScenario) -> Vec<f64> {
    let w = scenario.window;
    let n = ((w.end_s - w.start_s) / SAMPLE_INTERVAL_S).ceil() as usize;
    (0..n)
        .map(|i| w.start_s + i as f64 * SAMPLE_INTERVAL_S)
        .filter(|t| *t < w.end_s)
        .collect()
}

fn bound(v: f64, p: &MetricProfile) -> f64 {
    let v = v.max(0.0);
    p.max.map_or(v, |m| v.min(m))
}

fn pod_value(
    topo: &Topology,
    pod: &str,
    metric: &str,
    p: &MetricProfile,
    z: f64,
    active: &[&FaultSpec],
) -> f64 {
    let mut v = bound(p.baseline + p.sigma * z, p);
    for f in active {
        let hits_pod = f.affected_pod(topo) == Some(pod);
        if !hits_pod {
            continue;
        }
        let m = f.magnitude;
        v = match (f.fault_type, metric) {
            (FaultType::CpuStress, "cpu_usage") => bound(m + 0.01 * z, p),
            (FaultType::MemoryStress, "memory_usage") => bound(m + 0.005 * z, p),
            (FaultType::PodFailure, "error_rate") => 1.0,
            (
                FaultType::PodFailure,
                "cpu_usage" | "memory_usage" | "request_latency" | "network_throughput",
            ) => 0.0,
            (FaultType::NetworkDelay, "request_latency") => v + m,
            (
                FaultType::NetworkLoss | FaultType::NetworkDuplicate | FaultType::NetworkCorrupt,
                "error_rate",
            ) => bound(v.max(m + 0.005 * z), p),
            (FaultType::NetworkPartition, "error_rate") => 1.0,
            (FaultType::NetworkPartition, "network_throughput") => 0.0,
            _ => v,
        };
    }
    v
}

fn node_value(node: &str, metric: &str, p: &MetricProfile, z: f64, active: &[&FaultSpec]) -> f64 {
    let mut v = bound(p.baseline + p.sigma * z, p);
    for f in active {
        let m = f.magnitude;
        v = match (&f.target, f.fault_type, metric) {
            (FaultTarget::Node { id }, FaultType::CpuStress, "node_cpu_usage") if id == node => {
                bound(m + 0.01 * z, p)
            }
            (FaultTarget::Node { id }, FaultType::MemoryStress, "node_memory_usage")
                if id == node =>
            {
                bound(m + 0.005 * z, p)
            }
            (
                FaultTarget::NodePair { a, b },
                FaultType::NetworkBandwidth,
                "node_network_throughput",
            ) if a == node || b == node => bound(m + 0.02 * m * z, p),
            _ => v,
        };
    }
    v
}

fn active_at(scenario: &EpisodeScenario, t: f64) -> Vec<&FaultSpec> {
    scenario.faults.iter().filter(|f| f.active_at(t)).collect()
}

fn render_metrics(scenario: &EpisodeScenario, topo: &Topology, times: &[f64]) -> Vec<MetricSeries> {
    let mut out = Vec::new();
    for pod in &topo.pods {
        for metric in POD_METRICS {
            let p = pod_profile(topo, &pod.id, metric).expect("catalog metric");
            let mut rng = stream(scenario.seed, &["metric", &pod.id, metric]);
            let samples = times
                .iter()
                .map(|&t| {
                    let z = clamped_normal(&mut rng);
                    (
                        t,
                        pod_value(topo, &pod.id, metric, &p, z, &active_at(scenario, t)),
                    )
                })
                .collect();
            out.push(MetricSeries {
                component: pod.id.clone(),
                metric: metric.to_string(),
                samples,
            });
        }
    }
    for node in &topo.nodes {
        for metric in NODE_METRICS {
            let p = node_profile(topo, &node.name, metric).expect("catalog metric");
            let mut rng = stream(scenario.seed, &["metric", &node.name, metric]);
            let samples = times
                .iter()
                .map(|&t| {
                    let z = clamped_normal(&mut rng);
                    (
                        t,
                        node_value(&node.name, metric, &p, z, &active_at(scenario, t)),
                    )
                })
                .collect();
            out.push(MetricSeries {
                component: node.name.clone(),
                metric: metric.to_string(),
                samples,
            });
        }
    }
    out
}

fn fault_log(f: &FaultSpec, service: &str) -> Option<String> {
    let pct = (f.magnitude * 100.0).round();
    let line = match f.fault_type {
        FaultType::CpuStress => {
            format!("WARN {service}: CPU throttling detected, usage at {pct}% of limit")
        }
        FaultType::MemoryStress if f.magnitude >= 0.95 => {
            format!("ERROR {service}: container OOMKilled, memory usage at {pct}% of limit")
        }
        FaultType::MemoryStress => {
            format!("WARN {service}: memory usage high, {pct}% of limit")
        }
        FaultType::PodFailure => {
            format!("ERROR {service}: readiness probe failed: connection refused")
        }
        FaultType::NetworkDelay => format!(
            "WARN {service}: slow responses, network round trip +{}ms",
            f.magnitude.round()
        ),
        FaultType::NetworkLoss => {
            format!("ERROR {service}: request timeout after retransmissions, packet loss {pct}%")
        }
        FaultType::NetworkDuplicate => {
            format!("WARN {service}: duplicate ack received, retransmitted segments")
        }
        FaultType::NetworkCorrupt => {
            format!("ERROR {service}: checksum mismatch on inbound segment")
        }
        FaultType::NetworkPartition => {
            format!("ERROR {service}: dial tcp to peers: connection refused")
        }
        FaultType::NetworkBandwidth => return None,
    };
    Some(line)
}

fn render_logs(scenario: &EpisodeScenario, topo: &Topology, times: &[f64]) -> Vec<LogLine> {
    let mut out = Vec::new();
    for pod in &topo.pods {
        let mut rng = stream(scenario.seed, &["log", &pod.id]);
        let latency = pod_profile(topo, &pod.id, "request_latency")
            .expect("catalog metric")
            .baseline;
        for &t in times {
            let served: u32 = rng.random_range(80..120);
            let jitter = clamped_normal(&mut rng);
            let active: Vec<&FaultSpec> = active_at(scenario, t)
                .into_iter()
                .filter(|f| f.affected_pod(topo) == Some(pod.id.as_str()))
                .collect();
            let down = active.iter().any(|f| f.fault_type == FaultType::PodFailure);
            if !down {
                out.push(LogLine {
                    pod: pod.id.clone(),
                    t,
                    text: format!(
                        "INFO {}: served {served} requests, mean latency {:.1}ms",
                        pod.service,
                        latency * (1.0 + 0.04 * jitter)
                    ),
                });
            }
            for f in active {
                if let Some(text) = fault_log(f, &pod.service) {
                    out.push(LogLine {
                        pod: pod.id.clone(),
                        t,
                        text,
                    });
                }
            }
        }
    }
    out
}

/// Extra latency and optional error for one call at time of `active`.
fn call_effect(
    topo: &Topology,
    active: &[&FaultSpec],
    caller: Option<&str>,
    callee: &str,
    u: f64,
) -> (f64, Option<&'static str>) {
    let mut extra = 0.0;
    let mut error = None;
    let pod_service = |id: &str| topo.pod(id).map(|p| p.service.as_str());
    for f in active {
        let into_target = match &f.target {
            FaultTarget::Pod { id } => pod_service(id) == Some(callee),
            FaultTarget::Edge { from, to } => caller == Some(from.as_str()) && to == callee,
            _ => false,
        };
        match f.fault_type {
            FaultType::PodFailure if into_target => error = error.or(f.fault_type.span_error()),
            FaultType::NetworkPartition => {
                let out_of_target = matches!(&f.target, FaultTarget::Pod { id }
                    if caller.is_some() && pod_service(id) == caller);
                if into_target || out_of_target {
                    error = error.or(f.fault_type.span_error());
                }
            }
            FaultType::NetworkLoss | FaultType::NetworkDuplicate | FaultType::NetworkCorrupt
                if into_target && u < f.magnitude =>
            {
                error = error.or(f.fault_type.span_error());
            }
            FaultType::NetworkDelay if into_target => extra += f.magnitude,
            FaultType::NetworkBandwidth => {
                if let (FaultTarget::NodePair { a, b }, Some(caller)) = (&f.target, caller) {
                    let (na, nb) = (topo.node_of_service(caller), topo.node_of_service(callee));
                    let crosses = (na == Some(a.as_str()) && nb == Some(b.as_str()))
                        || (na == Some(b.as_str()) && nb == Some(a.as_str()));
                    if crosses {
                        extra += 1000.0 / f.magnitude;
                    }
                }
            }
            _ => {}
        }
    }
    (extra, error)
}

struct TraceBuilder<'a> {
    topo: &'a Topology,
    active: Vec<&'a FaultSpec>,
    trace_id: String,
    draws: Vec<(f64, f64)>,
    next: usize,
    spans: Vec<Span>,
}

impl TraceBuilder<'_> {
    /// Appends the span for `node` and its subtree; returns its duration.
    fn visit(
        &mut self,
        node: &CallNode,
        caller: Option<&str>,
        parent: Option<String>,
        start_s: f64,
    ) -> f64 {
        let slot = self.next;
        self.next += 1;
        let (z, u) = self.draws[slot];
        let base = match caller {
            Some(c) => {
                self.topo
                    .edge(c, &node.service)
                    .expect("route edges exist")
                    .latency_ms
            }
            None => self.topo.frontend_latency_ms,
        };
        let own = base * (1.0 + 0.1 * z);
        let (extra, error) = call_effect(self.topo, &self.active, caller, &node.service, u);
        let span_id = format!("{}-{:02}", &self.trace_id[..8], slot);
        let idx = self.spans.len();
        self.spans.push(Span {
            trace_id: self.trace_id.clone(),
            span_id: span_id.clone(),
            parent_span_id: parent,
            service: node.service.clone(),
            start_s,
            duration_ms: 0.0,
            status: if error.is_some() {
                SpanStatus::Error
            } else {
                SpanStatus::Ok
            },
            error_message: error.map(str::to_string),
        });
        let mut duration = own + extra;
        if error.is_none() {
            let mut cursor = start_s + (own + extra) / 2000.0;
            for child in &node.children {
                let d = self.visit(child, Some(&node.service), Some(span_id.clone()), cursor);
                cursor += d / 1000.0;
                duration += d;
            }
        } else {
            // skipped subtrees still consume their draw slots
            self.next += count_nodes(node) - 1;
        }
        self.spans[idx].duration_ms = duration;
        duration
    }
}

fn count_nodes(n: &CallNode) -> usize {
    1 + n.children.iter().map(count_nodes).sum::<usize>()
}

fn render_traces(scenario: &EpisodeScenario, topo: &Topology, times: &[f64]) -> Vec<Trace> {
    let mut out = Vec::new();
    for (tick, &t) in times.iter().enumerate() {
        for (r, route) in topo.routes.iter().enumerate() {
            let start_s = t + r as f64;
            let tick_s = tick.to_string();
            let mut rng = stream(scenario.seed, &["trace", &tick_s, &route.name]);
            let id_bits: u64 = rng.random();
            let trace_id = format!("{id_bits:016x}");
            let draws = (0..count_nodes(&route.root))
                .map(|_| (clamped_normal(&mut rng), rng.random::<f64>()))
                .collect();
            let mut b = TraceBuilder {
                topo,
                active: active_at(scenario, start_s),
                trace_id: trace_id.clone(),
                draws,
                next: 0,
                spans: Vec::new(),
            };
            b.visit(&route.root, None, None, start_s);
            out.push(Trace {
                trace_id,
                route: route.name.clone(),
                start_s,
                spans: b.spans,
            });
        }
    }
    out
}

/// Renders all three modalities. Pure function of the scenario.
pub fn render_telemetry(scenario: &EpisodeScenario, topo: &Topology) -> Telemetry {
    let times = sample_times(scenario);
    Telemetry {
        metrics: render_metrics(scenario, topo, &times),
        logs: render_logs(scenario, topo, &times),
        traces: render_traces(scenario, topo, &times),
    }
}
