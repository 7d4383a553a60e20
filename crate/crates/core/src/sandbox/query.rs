use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::fault::{FaultTarget, FaultType};
use super::scenario::{EpisodeScenario, TimeWindow};
use super::telemetry::{
    render_telemetry, LogLine, MetricSeries, Telemetry, Trace, NODE_METRICS, POD_METRICS,
};
use super::topology::{PodPhase, Topology, Workload};
use super::SandboxError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceKind {
    Pods,
    Nodes,
    Services,
    Deployments,
    StatefulSets,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; 5] = [
        ResourceKind::Pods,
        ResourceKind::Nodes,
        ResourceKind::Services,
        ResourceKind::Deployments,
        ResourceKind::StatefulSets,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceKind::Pods => "pods",
            ResourceKind::Nodes => "nodes",
            ResourceKind::Services => "services",
            ResourceKind::Deployments => "deployments",
            ResourceKind::StatefulSets => "statefulsets",
        }
    }
}

impl FromStr for ResourceKind {
    type Err = SandboxError;

    /// Accepts kubectl-style plurals, singulars and short names.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "pods" | "pod" | "po" => ResourceKind::Pods,
            "nodes" | "node" | "no" => ResourceKind::Nodes,
            "services" | "service" | "svc" => ResourceKind::Services,
            "deployments" | "deployment" | "deploy" => ResourceKind::Deployments,
            "statefulsets" | "statefulset" | "sts" => ResourceKind::StatefulSets,
            other => {
                return Err(SandboxError::NotFound {
                    kind: "resource kind",
                    name: other.to_string(),
                })
            }
        })
    }
}

/// One row of a resource state table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceRow {
    pub name: String,
    pub status: String,
    pub details: String,
    pub healthy: bool,
}

/// Read-only view of a monitored deployment.
pub trait DataSource: Send + Sync {
    fn episode_window(&self) -> TimeWindow;
    fn pods(&self) -> Vec<String>;
    fn nodes(&self) -> Vec<String>;
    fn services(&self) -> Vec<String>;
    /// Pods backing `service`.
    fn service_pods(&self, service: &str) -> Vec<String>;
    fn metric_catalog(&self) -> Vec<String>;
    fn query_metrics(
        &self,
        component: &str,
        metric: &str,
        window: TimeWindow,
    ) -> Result<MetricSeries, SandboxError>;
    fn query_logs(&self, pod: &str, window: TimeWindow) -> Result<Vec<LogLine>, SandboxError>;
    fn query_traces(&self, window: TimeWindow) -> Vec<Trace>;
    fn query_resource_state(&self, kind: ResourceKind, window: TimeWindow) -> Vec<ResourceRow>;
    fn namespaces(&self) -> Vec<String>;
    /// Fingerprint of everything the source can return.
    fn digest(&self) -> String;

    /// Pods and nodes.
    fn components(&self) -> Vec<String> {
        let mut c = self.pods();
        c.extend(self.nodes());
        c
    }
}

/// A scenario together with its rendered telemetry.
#[derive(Debug, Clone)]
pub struct Sandbox {
    scenario: EpisodeScenario,
    topology: Topology,
    telemetry: Telemetry,
}

impl Sandbox {
    pub fn new(scenario: EpisodeScenario) -> Result<Self, SandboxError> {
        scenario.validate()?;
        let topology = scenario.resolve_topology()?;
        let telemetry = render_telemetry(&scenario, &topology);
        Ok(Self {
            scenario,
            topology,
            telemetry,
        })
    }

    pub fn scenario(&self) -> &EpisodeScenario {
        &self.scenario
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn telemetry(&self) -> &Telemetry {
        &self.telemetry
    }

    fn pod_failed_in(&self, pod: &str, window: TimeWindow) -> bool {
        self.scenario.faults.iter().any(|f| {
            f.fault_type == FaultType::PodFailure
                && matches!(&f.target, FaultTarget::Pod { id } if id == pod)
                && window.overlaps(f.start_s, f.end_s())
        })
    }

    fn node_pressure_in(&self, node: &str, window: TimeWindow) -> Option<&'static str> {
        self.scenario
            .faults
            .iter()
            .find_map(|f| match (&f.target, f.fault_type) {
                (FaultTarget::Node { id }, FaultType::CpuStress)
                    if id == node && window.overlaps(f.start_s, f.end_s()) =>
                {
                    Some("CPUPressure")
                }
                (FaultTarget::Node { id }, FaultType::MemoryStress)
                    if id == node && window.overlaps(f.start_s, f.end_s()) =>
                {
                    Some("MemoryPressure")
                }
                _ => None,
            })
    }

    fn workload_rows(&self, kind: Workload, window: TimeWindow) -> Vec<ResourceRow> {
        self.topology
            .services
            .iter()
            .filter(|s| s.workload == kind)
            .map(|s| {
                let pods: Vec<_> = self.topology.pods_of(&s.name).collect();
                let ready = pods
                    .iter()
                    .filter(|p| !self.pod_failed_in(&p.id, window))
                    .count();
                ResourceRow {
                    name: s.name.clone(),
                    status: format!("{ready}/{} ready", pods.len()),
                    details: format!("replicas={}", pods.len()),
                    healthy: ready == pods.len(),
                }
            })
            .collect()
    }
}

impl DataSource for Sandbox {
    fn episode_window(&self) -> TimeWindow {
        self.scenario.window
    }

    fn pods(&self) -> Vec<String> {
        self.topology.pods.iter().map(|p| p.id.clone()).collect()
    }

    fn nodes(&self) -> Vec<String> {
        self.topology.nodes.iter().map(|n| n.name.clone()).collect()
    }

    fn services(&self) -> Vec<String> {
        self.topology
            .services
            .iter()
            .map(|s| s.name.clone())
            .collect()
    }

    fn service_pods(&self, service: &str) -> Vec<String> {
        self.topology
            .pods_of(service)
            .map(|p| p.id.clone())
            .collect()
    }

    fn metric_catalog(&self) -> Vec<String> {
        POD_METRICS
            .iter()
            .chain(NODE_METRICS.iter())
            .map(|m| m.to_string())
            .collect()
    }

    fn query_metrics(
        &self,
        component: &str,
        metric: &str,
        window: TimeWindow,
    ) -> Result<MetricSeries, SandboxError> {
        if self.topology.pod(component).is_none() && self.topology.node(component).is_none() {
            return Err(SandboxError::NotFound {
                kind: "component",
                name: component.to_string(),
            });
        }
        let series = self
            .telemetry
            .metrics
            .iter()
            .find(|s| s.component == component && s.metric == metric)
            .ok_or_else(|| SandboxError::NotFound {
                kind: "metric",
                name: format!("{metric} on {component}"),
            })?;
        Ok(MetricSeries {
            component: series.component.clone(),
            metric: series.metric.clone(),
            samples: series
                .samples
                .iter()
                .copied()
                .filter(|(t, _)| window.contains(*t))
                .collect(),
        })
    }

    fn query_logs(&self, pod: &str, window: TimeWindow) -> Result<Vec<LogLine>, SandboxError> {
        if self.topology.pod(pod).is_none() {
            return Err(SandboxError::NotFound {
                kind: "pod",
                name: pod.to_string(),
            });
        }
        Ok(self
            .telemetry
            .logs
            .iter()
            .filter(|l| l.pod == pod && window.contains(l.t))
            .cloned()
            .collect())
    }

    fn query_traces(&self, window: TimeWindow) -> Vec<Trace> {
        self.telemetry
            .traces
            .iter()
            .filter(|t| window.contains(t.start_s))
            .cloned()
            .collect()
    }

    fn query_resource_state(&self, kind: ResourceKind, window: TimeWindow) -> Vec<ResourceRow> {
        match kind {
            ResourceKind::Pods => self
                .topology
                .pods
                .iter()
                .map(|p| {
                    let failed = self.pod_failed_in(&p.id, window);
                    let phase = if failed { PodPhase::Failed } else { p.phase };
                    ResourceRow {
                        name: p.id.clone(),
                        status: phase.to_string(),
                        details: if failed {
                            format!("node={} ready=0/1 readiness probe failing", p.node)
                        } else {
                            format!("node={} ready=1/1", p.node)
                        },
                        healthy: phase == PodPhase::Running,
                    }
                })
                .collect(),
            ResourceKind::Nodes => self
                .topology
                .nodes
                .iter()
                .map(|n| {
                    let pressure = self.node_pressure_in(&n.name, window);
                    ResourceRow {
                        name: n.name.clone(),
                        status: "Ready".into(),
                        details: match pressure {
                            Some(c) => {
                                format!("cpu={} memory={}Gi {c}=True", n.cpu_cores, n.memory_gib)
                            }
                            None => format!("cpu={} memory={}Gi", n.cpu_cores, n.memory_gib),
                        },
                        healthy: pressure.is_none(),
                    }
                })
                .collect(),
            ResourceKind::Services => self
                .topology
                .services
                .iter()
                .map(|s| {
                    let pods: Vec<_> = self.topology.pods_of(&s.name).collect();
                    let up = pods
                        .iter()
                        .filter(|p| !self.pod_failed_in(&p.id, window))
                        .count();
                    ResourceRow {
                        name: s.name.clone(),
                        status: if up == pods.len() { "ok" } else { "degraded" }.into(),
                        details: format!("port={} endpoints={up}/{}", s.port, pods.len()),
                        healthy: up == pods.len(),
                    }
                })
                .collect(),
            ResourceKind::Deployments => self.workload_rows(Workload::Deployment, window),
            ResourceKind::StatefulSets => self.workload_rows(Workload::StatefulSet, window),
        }
    }

    fn namespaces(&self) -> Vec<String> {
        ["default", "kube-system", "monitoring"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn digest(&self) -> String {
        self.telemetry.digest()
    }
}
