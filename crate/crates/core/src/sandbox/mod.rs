//! Simulated microservice deployment with fault injection.
//!
//! A scenario names a fixture topology, a list of faults and a seed. The
//! rendered telemetry (metrics, logs, traces) is a pure function of the
//! scenario and is exposed read-only through [`DataSource`].

mod fault;
mod query;
mod scenario;
mod telemetry;
mod topology;

use thiserror::Error;

pub use fault::{FaultSpec, FaultTarget, FaultType};
pub use query::{DataSource, ResourceKind, ResourceRow, Sandbox};
pub use scenario::{
    derive_ground_truth, generate_corpus, generate_scenario, EpisodeScenario, GroundTruth,
    ScenarioConfig, TimeWindow, DEFAULT_FAULT_DURATION_S, DEFAULT_FAULT_START_S, DEFAULT_WINDOW_S,
};
pub use telemetry::{
    node_profile, pod_profile, render_telemetry, LogLine, MetricProfile, MetricSeries, Span,
    SpanStatus, Telemetry, Trace, NODE_METRICS, POD_METRICS, SAMPLE_INTERVAL_S,
};
pub use topology::{
    CallEdge, CallNode, Node, Pod, PodPhase, Route, Service, Topology, Workload, ONLINE_BOUTIQUE,
};

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{kind} not found: {name}")]
    NotFound { kind: &'static str, name: String },
}
