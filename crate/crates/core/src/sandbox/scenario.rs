use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fault::{FaultSpec, FaultTarget, FaultType};
use super::topology::{Topology, ONLINE_BOUTIQUE};
use super::SandboxError;

/// Half-open time interval `[start_s, end_s)` in episode seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start_s: f64,
    pub end_s: f64,
}

impl TimeWindow {
    pub fn new(start_s: f64, end_s: f64) -> Self {
        Self { start_s, end_s }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t < self.end_s
    }

    pub fn overlaps(&self, start: f64, end: f64) -> bool {
        start < self.end_s && end > self.start_s
    }

    /// Parses `"300-600"` or `"300..600"`.
    pub fn parse(s: &str) -> Option<Self> {
        let (a, b) = s.split_once("..").or_else(|| s.split_once('-'))?;
        let (a, b) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
        (a < b).then_some(Self::new(a, b))
    }
}

impl std::fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.start_s, self.end_s)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub locations: BTreeSet<String>,
    pub types: BTreeSet<FaultType>,
}

/// A simulated incident. Stored as pretty JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeScenario {
    pub id: String,
    pub topology: String,
    pub seed: u64,
    pub window: TimeWindow,
    pub faults: Vec<FaultSpec>,
    pub ground_truth: GroundTruth,
    /// Alternative ids accepted as a location (alias -> canonical id).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub location_aliases: BTreeMap<String, String>,
}

impl EpisodeScenario {
    pub fn new(
        id: impl Into<String>,
        seed: u64,
        faults: Vec<FaultSpec>,
    ) -> Result<Self, SandboxError> {
        let topo = Topology::fixture(ONLINE_BOUTIQUE)?;
        let mut s = Self {
            id: id.into(),
            topology: ONLINE_BOUTIQUE.into(),
            seed,
            window: TimeWindow::new(0.0, DEFAULT_WINDOW_S),
            ground_truth: GroundTruth::default(),
            faults,
            location_aliases: BTreeMap::new(),
        };
        s.ground_truth = derive_ground_truth(&s.faults, &topo);
        s.validate()?;
        Ok(s)
    }

    /// Scenario with no injected fault.
    pub fn healthy(seed: u64) -> Self {
        Self::new(format!("healthy-{seed}"), seed, Vec::new()).expect("healthy scenario is valid")
    }

    pub fn resolve_topology(&self) -> Result<Topology, SandboxError> {
        Topology::fixture(&self.topology)
    }

    pub fn validate(&self) -> Result<(), SandboxError> {
        let topo = self.resolve_topology()?;
        topo.validate()?;
        if !(self.window.end_s > self.window.start_s) {
            return Err(SandboxError::Config("scenario window is empty".into()));
        }
        for f in &self.faults {
            f.validate(&topo)?;
            if !self.window.contains(f.start_s) {
                return Err(SandboxError::Config(format!(
                    "fault start {} outside the episode window",
                    f.start_s
                )));
            }
        }
        if derive_ground_truth(&self.faults, &topo) != self.ground_truth {
            return Err(SandboxError::Config(
                "ground truth does not match the injected faults".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, SandboxError> {
        let s: Self = serde_json::from_str(text)
            .map_err(|e| SandboxError::Config(format!("invalid scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, SandboxError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            SandboxError::Config(format!("cannot read scenario {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }
}

pub fn derive_ground_truth(faults: &[FaultSpec], topo: &Topology) -> GroundTruth {
    GroundTruth {
        locations: faults.iter().flat_map(|f| f.locations(topo)).collect(),
        types: faults.iter().map(|f| f.fault_type).collect(),
    }
}

pub const DEFAULT_WINDOW_S: f64 = 600.0;
pub const DEFAULT_FAULT_START_S: f64 = 300.0;
pub const DEFAULT_FAULT_DURATION_S: f64 = 240.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub topology: String,
    pub fault_types: Vec<FaultType>,
    /// Faults injected per scenario; 1 gives single-root-cause episodes.
    pub faults_per_scenario: usize,
    pub window_s: f64,
    pub fault_start_s: f64,
    pub fault_duration_s: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            topology: ONLINE_BOUTIQUE.into(),
            fault_types: FaultType::ALL.to_vec(),
            faults_per_scenario: 1,
            window_s: DEFAULT_WINDOW_S,
            fault_start_s: DEFAULT_FAULT_START_S,
            fault_duration_s: DEFAULT_FAULT_DURATION_S,
        }
    }
}

fn round_to(x: f64, step: f64) -> f64 {
    (x / step).round() * step
}

fn draw_fault(
    rng: &mut ChaCha8Rng,
    fault_type: FaultType,
    topo: &Topology,
    cfg: &ScenarioConfig,
    taken: &BTreeSet<String>,
) -> Result<FaultSpec, SandboxError> {
    let callee = topo.callee_services();
    let target = if fault_type == FaultType::NetworkBandwidth {
        let mut pairs = Vec::new();
        for (i, a) in topo.nodes.iter().enumerate() {
            for b in &topo.nodes[i + 1..] {
                if !taken.contains(&a.name) && !taken.contains(&b.name) {
                    pairs.push((a.name.clone(), b.name.clone()));
                }
            }
        }
        let (a, b) = pairs
            .choose(rng)
            .cloned()
            .ok_or_else(|| SandboxError::Config("no free node pair left".into()))?;
        FaultTarget::NodePair { a, b }
    } else {
        // network faults need inbound traffic, so the frontend is excluded
        let pods: Vec<&str> = topo
            .pods
            .iter()
            .filter(|p| !taken.contains(&p.id))
            .filter(|p| !fault_type.is_network() || callee.contains(p.service.as_str()))
            .filter(|p| fault_type != FaultType::PodFailure || p.service != topo.frontend)
            .map(|p| p.id.as_str())
            .collect();
        let id = pods
            .choose(rng)
            .ok_or_else(|| SandboxError::Config("no free pod left".into()))?;
        FaultTarget::Pod { id: id.to_string() }
    };
    let magnitude = match fault_type {
        FaultType::CpuStress => round_to(rng.random_range(0.88..=0.98), 0.01),
        FaultType::MemoryStress => round_to(rng.random_range(0.86..=0.99), 0.01),
        FaultType::PodFailure | FaultType::NetworkPartition => 1.0,
        FaultType::NetworkDelay => round_to(rng.random_range(200.0..=800.0), 50.0),
        FaultType::NetworkLoss | FaultType::NetworkDuplicate | FaultType::NetworkCorrupt => {
            round_to(rng.random_range(0.2..=0.6), 0.05)
        }
        FaultType::NetworkBandwidth => round_to(rng.random_range(2.0..=10.0), 1.0),
    };
    Ok(FaultSpec {
        fault_type,
        target,
        start_s: cfg.fault_start_s,
        duration_s: cfg.fault_duration_s,
        magnitude,
    })
}

fn build(
    id: String,
    seed: u64,
    cfg: &ScenarioConfig,
    primary: Option<FaultType>,
) -> Result<EpisodeScenario, SandboxError> {
    let topo = Topology::fixture(&cfg.topology)?;
    if cfg.fault_types.is_empty() {
        return Err(SandboxError::Config("no fault types allowed".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut faults = Vec::new();
    let mut taken = BTreeSet::new();
    for i in 0..cfg.faults_per_scenario {
        let ty = match (i, primary) {
            (0, Some(t)) => t,
            _ => {
                // three nodes admit only one disjoint node pair
                let pool: Vec<FaultType> = cfg
                    .fault_types
                    .iter()
                    .copied()
                    .filter(|t| {
                        *t != FaultType::NetworkBandwidth
                            || !faults.iter().any(|f: &FaultSpec| f.fault_type == *t)
                    })
                    .collect();
                *pool
                    .choose(&mut rng)
                    .ok_or_else(|| SandboxError::Config("no placeable fault type left".into()))?
            }
        };
        let f = draw_fault(&mut rng, ty, &topo, cfg, &taken)?;
        taken.extend(f.locations(&topo));
        faults.push(f);
    }
    let scenario = EpisodeScenario {
        id,
        topology: cfg.topology.clone(),
        seed,
        window: TimeWindow::new(0.0, cfg.window_s),
        ground_truth: derive_ground_truth(&faults, &topo),
        faults,
        location_aliases: BTreeMap::new(),
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Deterministic in `seed`; the fault type is drawn from the allowed set.
pub fn generate_scenario(seed: u64, cfg: &ScenarioConfig) -> Result<EpisodeScenario, SandboxError> {
    build(format!("scenario-{seed}"), seed, cfg, None)
}

/// `count` scenarios with fault types assigned round-robin over the allowed
/// set; scenario `i` uses seed `base_seed + i`.
pub fn generate_corpus(
    base_seed: u64,
    count: usize,
    cfg: &ScenarioConfig,
) -> Result<Vec<EpisodeScenario>, SandboxError> {
    if cfg.fault_types.is_empty() {
        return Err(SandboxError::Config("no fault types allowed".into()));
    }
    (0..count)
        .map(|i| {
            let ty = cfg.fault_types[i % cfg.fault_types.len()];
            let seed = base_seed.wrapping_add(i as u64);
            build(format!("{:03}-{}", i, ty.slug()), seed, cfg, Some(ty))
        })
        .collect()
}
