use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::SandboxError;

pub const ONLINE_BOUTIQUE: &str = "online-boutique";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PodPhase {
    Running,
    Failed,
    Pending,
}

impl std::fmt::Display for PodPhase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PodPhase::Running => "Running",
            PodPhase::Failed => "Failed",
            PodPhase::Pending => "Pending",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Workload {
    Deployment,
    StatefulSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Service {
    pub name: String,
    pub port: u16,
    pub workload: Workload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pod {
    pub id: String,
    pub service: String,
    pub node: String,
    pub phase: PodPhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub cpu_cores: u32,
    pub memory_gib: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallEdge {
    pub from: String,
    pub to: String,
    pub latency_ms: f64,
    pub error_rate: f64,
}

/// Call tree of one request type, rooted at the frontend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallNode {
    pub service: String,
    #[serde(default)]
    pub children: Vec<CallNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub name: String,
    pub root: CallNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub name: String,
    pub frontend: String,
    /// Processing time of the frontend before it fans out.
    pub frontend_latency_ms: f64,
    pub services: Vec<Service>,
    pub pods: Vec<Pod>,
    pub nodes: Vec<Node>,
    pub call_edges: Vec<CallEdge>,
    pub routes: Vec<Route>,
}

fn call(service: &str, children: Vec<CallNode>) -> CallNode {
    CallNode {
        service: service.to_string(),
        children,
    }
}

fn leaf(service: &str) -> CallNode {
    call(service, Vec::new())
}

impl Topology {
    /// Named fixture topology.
    pub fn fixture(name: &str) -> Result<Self, SandboxError> {
        match name {
            ONLINE_BOUTIQUE => Ok(Self::online_boutique()),
            other => Err(SandboxError::Config(format!(
                "unknown topology fixture {other:?} (available: {ONLINE_BOUTIQUE})"
            ))),
        }
    }

    /// An 11-service e-commerce shop modelled on Online Boutique, one pod
    /// per service spread over three nodes.
    pub fn online_boutique() -> Self {
        let services = [
            ("frontend", 8080, "node-1"),
            ("cart", 7070, "node-1"),
            ("redis-cart", 6379, "node-1"),
            ("ad", 9555, "node-1"),
            ("productcatalog", 3550, "node-2"),
            ("currency", 7000, "node-2"),
            ("recommendation", 8081, "node-2"),
            ("email", 8082, "node-2"),
            ("checkout", 5050, "node-3"),
            ("payment", 50051, "node-3"),
            ("shipping", 50052, "node-3"),
        ];
        let edges = [
            ("frontend", "ad", 8.0),
            ("frontend", "recommendation", 12.0),
            ("frontend", "productcatalog", 6.0),
            ("frontend", "cart", 7.0),
            ("frontend", "shipping", 9.0),
            ("frontend", "currency", 4.0),
            ("frontend", "checkout", 20.0),
            ("recommendation", "productcatalog", 6.0),
            ("checkout", "productcatalog", 6.0),
            ("checkout", "cart", 7.0),
            ("checkout", "shipping", 9.0),
            ("checkout", "currency", 4.0),
            ("checkout", "payment", 15.0),
            ("checkout", "email", 10.0),
            ("cart", "redis-cart", 2.0),
        ];
        let cart = || call("cart", vec![leaf("redis-cart")]);
        let recommend = || call("recommendation", vec![leaf("productcatalog")]);
        let routes = vec![
            Route {
                name: "home".into(),
                root: call(
                    "frontend",
                    vec![
                        leaf("currency"),
                        leaf("productcatalog"),
                        cart(),
                        recommend(),
                        leaf("ad"),
                    ],
                ),
            },
            Route {
                name: "product".into(),
                root: call(
                    "frontend",
                    vec![
                        leaf("productcatalog"),
                        leaf("currency"),
                        recommend(),
                        leaf("ad"),
                    ],
                ),
            },
            Route {
                name: "view-cart".into(),
                root: call(
                    "frontend",
                    vec![cart(), leaf("shipping"), leaf("currency"), recommend()],
                ),
            },
            Route {
                name: "checkout".into(),
                root: call(
                    "frontend",
                    vec![call(
                        "checkout",
                        vec![
                            cart(),
                            leaf("productcatalog"),
                            leaf("currency"),
                            leaf("shipping"),
                            leaf("payment"),
                            leaf("email"),
                        ],
                    )],
                ),
            },
        ];
        Topology {
            name: ONLINE_BOUTIQUE.into(),
            frontend: "frontend".into(),
            frontend_latency_ms: 5.0,
            services: services
                .iter()
                .map(|(n, port, _)| Service {
                    name: n.to_string(),
                    port: *port,
                    workload: if *n == "redis-cart" {
                        Workload::StatefulSet
                    } else {
                        Workload::Deployment
                    },
                })
                .collect(),
            pods: services
                .iter()
                .map(|(n, _, node)| Pod {
                    id: format!("{n}-0"),
                    service: n.to_string(),
                    node: node.to_string(),
                    phase: PodPhase::Running,
                })
                .collect(),
            nodes: (1..=3)
                .map(|i| Node {
                    name: format!("node-{i}"),
                    cpu_cores: 8,
                    memory_gib: 32,
                })
                .collect(),
            call_edges: edges
                .iter()
                .map(|(a, b, l)| CallEdge {
                    from: a.to_string(),
                    to: b.to_string(),
                    latency_ms: *l,
                    error_rate: 0.0,
                })
                .collect(),
            routes,
        }
    }

    pub fn validate(&self) -> Result<(), SandboxError> {
        let services: BTreeSet<&str> = self.services.iter().map(|s| s.name.as_str()).collect();
        let nodes: BTreeSet<&str> = self.nodes.iter().map(|n| n.name.as_str()).collect();
        let bad = |m: String| Err(SandboxError::Config(m));
        if !services.contains(self.frontend.as_str()) {
            return bad(format!("frontend {} is not a service", self.frontend));
        }
        for p in &self.pods {
            if !services.contains(p.service.as_str()) {
                return bad(format!(
                    "pod {} references unknown service {}",
                    p.id, p.service
                ));
            }
            if !nodes.contains(p.node.as_str()) {
                return bad(format!("pod {} references unknown node {}", p.id, p.node));
            }
        }
        for e in &self.call_edges {
            if !services.contains(e.from.as_str()) || !services.contains(e.to.as_str()) {
                return bad(format!(
                    "edge {}->{} references unknown service",
                    e.from, e.to
                ));
            }
            if !(e.latency_ms > 0.0) {
                return bad(format!("edge {}->{} latency must be > 0", e.from, e.to));
            }
            if !(0.0..=1.0).contains(&e.error_rate) {
                return bad(format!(
                    "edge {}->{} error rate outside [0,1]",
                    e.from, e.to
                ));
            }
        }
        // reachability from the frontend
        let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for e in &self.call_edges {
            adj.entry(e.from.as_str()).or_default().push(e.to.as_str());
        }
        let mut seen = BTreeSet::from([self.frontend.as_str()]);
        let mut queue = VecDeque::from([self.frontend.as_str()]);
        while let Some(s) = queue.pop_front() {
            for &n in adj.get(s).into_iter().flatten() {
                if seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        if let Some(lost) = services.difference(&seen).next() {
            return bad(format!(
                "service {lost} is unreachable from {}",
                self.frontend
            ));
        }
        for r in &self.routes {
            if r.root.service != self.frontend {
                return bad(format!("route {} does not start at the frontend", r.name));
            }
            self.check_route(&r.root)?;
        }
        Ok(())
    }

    fn check_route(&self, node: &CallNode) -> Result<(), SandboxError> {
        for c in &node.children {
            if self.edge(&node.service, &c.service).is_none() {
                return Err(SandboxError::Config(format!(
                    "route uses missing edge {}->{}",
                    node.service, c.service
                )));
            }
            self.check_route(c)?;
        }
        Ok(())
    }

    pub fn edge(&self, from: &str, to: &str) -> Option<&CallEdge> {
        self.call_edges
            .iter()
            .find(|e| e.from == from && e.to == to)
    }

    pub fn pod(&self, id: &str) -> Option<&Pod> {
        self.pods.iter().find(|p| p.id == id)
    }

    pub fn pods_of<'a>(&'a self, service: &'a str) -> impl Iterator<Item = &'a Pod> + 'a {
        self.pods.iter().filter(move |p| p.service == service)
    }

    pub fn service(&self, name: &str) -> Option<&Service> {
        self.services.iter().find(|s| s.name == name)
    }

    pub fn node(&self, name: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.name == name)
    }

    /// Pod serving `service`; the fixture runs one replica per service.
    pub fn primary_pod(&self, service: &str) -> Option<&Pod> {
        self.pods.iter().find(|p| p.service == service)
    }

    /// Node hosting the (first) pod of `service`.
    pub fn node_of_service(&self, service: &str) -> Option<&str> {
        self.primary_pod(service).map(|p| p.node.as_str())
    }

    /// Services with at least one inbound call edge.
    pub fn callee_services(&self) -> BTreeSet<&str> {
        self.call_edges.iter().map(|e| e.to.as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_valid() {
        let t = Topology::online_boutique();
        t.validate().unwrap();
        assert_eq!(t.services.len(), 11);
        assert_eq!(t.pods.len(), 11);
        assert_eq!(t.nodes.len(), 3);
    }

    #[test]
    fn unknown_fixture_is_config_error() {
        assert!(matches!(
            Topology::fixture("sock-shop"),
            Err(SandboxError::Config(_))
        ));
    }

    #[test]
    fn disconnected_service_rejected() {
        let mut t = Topology::online_boutique();
        t.call_edges.retain(|e| e.to != "email");
        t.routes.clear();
        assert!(t.validate().is_err());
    }

    #[test]
    fn routes_cover_every_edge() {
        let t = Topology::online_boutique();
        fn walk(n: &CallNode, out: &mut BTreeSet<(String, String)>) {
            for c in &n.children {
                out.insert((n.service.clone(), c.service.clone()));
                walk(c, out);
            }
        }
        let mut used = BTreeSet::new();
        for r in &t.routes {
            walk(&r.root, &mut used);
        }
        assert_eq!(used.len(), t.call_edges.len());
    }
}
