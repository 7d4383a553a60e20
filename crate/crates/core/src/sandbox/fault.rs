use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::topology::Topology;
use super::SandboxError;

/// The nine injectable fault types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FaultType {
    CpuStress,
    MemoryStress,
    PodFailure,
    NetworkDelay,
    NetworkLoss,
    NetworkPartition,
    NetworkDuplicate,
    NetworkCorrupt,
    NetworkBandwidth,
}

impl FaultType {
    pub const ALL: [FaultType; 9] = [
        FaultType::CpuStress,
        FaultType::MemoryStress,
        FaultType::PodFailure,
        FaultType::NetworkDelay,
        FaultType::NetworkLoss,
        FaultType::NetworkPartition,
        FaultType::NetworkDuplicate,
        FaultType::NetworkCorrupt,
        FaultType::NetworkBandwidth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FaultType::CpuStress => "CpuStress",
            FaultType::MemoryStress => "MemoryStress",
            FaultType::PodFailure => "PodFailure",
            FaultType::NetworkDelay => "NetworkDelay",
            FaultType::NetworkLoss => "NetworkLoss",
            FaultType::NetworkPartition => "NetworkPartition",
            FaultType::NetworkDuplicate => "NetworkDuplicate",
            FaultType::NetworkCorrupt => "NetworkCorrupt",
            FaultType::NetworkBandwidth => "NetworkBandwidth",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            FaultType::CpuStress => "cpu-stress",
            FaultType::MemoryStress => "memory-stress",
            FaultType::PodFailure => "pod-failure",
            FaultType::NetworkDelay => "network-delay",
            FaultType::NetworkLoss => "network-loss",
            FaultType::NetworkPartition => "network-partition",
            FaultType::NetworkDuplicate => "network-duplicate",
            FaultType::NetworkCorrupt => "network-corrupt",
            FaultType::NetworkBandwidth => "network-bandwidth",
        }
    }

    /// Inclusive magnitude range. CPU and memory are fractions of the
    /// limit, delay is milliseconds, loss/duplicate/corrupt are packet
    /// fractions, bandwidth is the limit in MB/s. Pod failure and
    /// partition ignore magnitude.
    pub fn magnitude_range(self) -> (f64, f64) {
        match self {
            FaultType::CpuStress | FaultType::MemoryStress => (0.85, 1.0),
            FaultType::PodFailure | FaultType::NetworkPartition => (0.0, 1.0),
            FaultType::NetworkDelay => (50.0, 5000.0),
            FaultType::NetworkLoss | FaultType::NetworkDuplicate | FaultType::NetworkCorrupt => {
                (0.1, 1.0)
            }
            FaultType::NetworkBandwidth => (1.0, 20.0),
        }
    }

    pub fn is_network(self) -> bool {
        matches!(
            self,
            FaultType::NetworkDelay
                | FaultType::NetworkLoss
                | FaultType::NetworkPartition
                | FaultType::NetworkDuplicate
                | FaultType::NetworkCorrupt
        )
    }

    /// Error message attached to spans this fault breaks.
    pub fn span_error(self) -> Option<&'static str> {
        match self {
            FaultType::PodFailure => Some("Service unavailable"),
            FaultType::NetworkPartition => Some("connection refused"),
            FaultType::NetworkLoss => Some("timeout"),
            FaultType::NetworkCorrupt => Some("checksum mismatch"),
            FaultType::NetworkDuplicate => Some("duplicate ack"),
            _ => None,
        }
    }
}

impl fmt::Display for FaultType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FaultType {
    type Err = SandboxError;

    /// Accepts `CpuStress`, `cpu-stress`, `cpu_stress`, `CPU Stress` and so on.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        FaultType::ALL
            .into_iter()
            .find(|t| t.name().to_ascii_lowercase() == norm)
            .ok_or_else(|| SandboxError::Config(format!("unknown fault type {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultTarget {
    Pod {
        id: String,
    },
    Node {
        id: String,
    },
    /// Calls from service `from` to service `to`.
    Edge {
        from: String,
        to: String,
    },
    NodePair {
        a: String,
        b: String,
    },
}

impl fmt::Display for FaultTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultTarget::Pod { id } => write!(f, "pod {id}"),
            FaultTarget::Node { id } => write!(f, "node {id}"),
            FaultTarget::Edge { from, to } => write!(f, "edge {from}->{to}"),
            FaultTarget::NodePair { a, b } => write!(f, "nodes {a}<->{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub fault_type: FaultType,
    pub target: FaultTarget,
    pub start_s: f64,
    pub duration_s: f64,
    pub magnitude: f64,
}

impl FaultSpec {
    pub fn active_at(&self, t: f64) -> bool {
        t >= self.start_s && t < self.start_s + self.duration_s
    }

    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }

    /// Component ids a correct diagnosis should name.
    pub fn locations(&self, topo: &Topology) -> Vec<String> {
        match &self.target {
            FaultTarget::Pod { id } | FaultTarget::Node { id } => vec![id.clone()],
            FaultTarget::Edge { to, .. } => topo
                .primary_pod(to)
                .map(|p| vec![p.id.clone()])
                .unwrap_or_default(),
            FaultTarget::NodePair { a, b } => vec![a.clone(), b.clone()],
        }
    }

    /// Pod whose own telemetry carries the fault, if any.
    pub fn affected_pod<'t>(&'t self, topo: &'t Topology) -> Option<&'t str> {
        match &self.target {
            FaultTarget::Pod { id } => Some(id),
            FaultTarget::Edge { to, .. } => topo.primary_pod(to).map(|p| p.id.as_str()),
            _ => None,
        }
    }

    pub fn validate(&self, topo: &Topology) -> Result<(), SandboxError> {
        let err = |m: String| Err(SandboxError::Config(m));
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return err(format!(
                "fault duration must be > 0, got {}",
                self.duration_s
            ));
        }
        if !(self.start_s >= 0.0) || !self.start_s.is_finite() {
            return err(format!("fault start must be >= 0, got {}", self.start_s));
        }
        let (lo, hi) = self.fault_type.magnitude_range();
        if !(lo..=hi).contains(&self.magnitude) {
            return err(format!(
                "{} magnitude {} outside [{lo}, {hi}]",
                self.fault_type, self.magnitude
            ));
        }
        let kind_ok = match (&self.target, self.fault_type) {
            (FaultTarget::Pod { .. }, t) => t != FaultType::NetworkBandwidth,
            (FaultTarget::Node { .. }, FaultType::CpuStress | FaultType::MemoryStress) => true,
            (FaultTarget::Edge { .. }, t) => t.is_network(),
            (FaultTarget::NodePair { .. }, FaultType::NetworkBandwidth) => true,
            _ => false,
        };
        if !kind_ok {
            return err(format!("{} cannot target {}", self.fault_type, self.target));
        }
        match &self.target {
            FaultTarget::Pod { id } if topo.pod(id).is_none() => err(format!("unknown pod {id}")),
            FaultTarget::Node { id } if topo.node(id).is_none() => {
                err(format!("unknown node {id}"))
            }
            FaultTarget::Edge { from, to } if topo.edge(from, to).is_none() => {
                err(format!("unknown edge {from}->{to}"))
            }
            FaultTarget::NodePair { a, b }
                if topo.node(a).is_none() || topo.node(b).is_none() || a == b =>
            {
                err(format!("invalid node pair {a}<->{b}"))
            }
            _ => Ok(()),
        }
    }
}
