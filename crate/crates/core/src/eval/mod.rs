//! Accuracy metrics, benchmark runs over scenario corpora, and reports.

mod corpus;
mod metrics;
mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corpus::{render_manifest, Corpus, CorpusEntry, Manifest, ManifestEntry};
pub use metrics::{
    accuracy, average_path_length, location_accuracy, location_accuracy_with, match_items,
    type_accuracy, type_accuracy_with, Aggregation, Counts, DEFAULT_SIGMA,
};
pub use report::{Aggregates, BenchmarkReport, EpisodeRow, RowOutcome};

use crate::agents::{run_episode, AgentConfig, EpisodeEnv, Transcript};
use crate::kb::KnowledgeBase;
use crate::llm::{build_backend, BackendConfig};
use crate::tools::{DetectorConfig, Registry, MAX_ROOT_CAUSES};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("corpus manifest: {0}")]
    Manifest(String),
    #[error("report: {0}")]
    Report(String),
    #[error("invalid evaluation config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub sigma: f64,
    pub max_root_causes: usize,
    pub aggregation: Aggregation,
    /// Parallel episodes; 0 uses every core.
    pub workers: usize,
    pub corpus: Option<std::path::PathBuf>,
    pub agent: AgentConfig,
    pub backend: BackendConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            max_root_causes: MAX_ROOT_CAUSES,
            aggregation: Aggregation::Corpus,
            workers: 0,
            corpus: None,
            agent: AgentConfig::default(),
            backend: BackendConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(EvalError::Config(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        if self.max_root_causes == 0 {
            return Err(EvalError::Config("max_root_causes must be positive".into()));
        }
        self.agent
            .validate()
            .map_err(|e| EvalError::Config(e.to_string()))?;
        self.backend
            .validate()
            .map_err(|e| EvalError::Config(e.to_string()))
    }
}

/// Shared read-only inputs of a benchmark run.
#[derive(Clone, Copy)]
pub struct BenchEnv<'a> {
    pub registry: &'a Registry,
    pub detector: &'a DetectorConfig,
    pub kb: &'a KnowledgeBase,
}

#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub report: BenchmarkReport,
    /// Transcripts in corpus order; `None` where the episode never started.
    pub transcripts: Vec<(String, Option<Transcript>)>,
}

/// Runs every corpus scenario once. Each episode gets its own backend built
/// from the config and the entry's script. Failures become aborted rows.
pub fn run_benchmark(
    corpus: &Corpus,
    config: &EvalConfig,
    env: BenchEnv<'_>,
) -> Result<BenchmarkRun, EvalError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| EvalError::Config(format!("cannot start workers: {e}")))?;
    let results: Vec<(EpisodeRow, Option<Transcript>)> = pool.install(|| {
        corpus
            .entries
            .par_iter()
            .map(|entry| {
                let llm = match build_backend(&config.backend, entry.script.clone()) {
                    Ok(b) => b,
                    Err(e) => return (EpisodeRow::aborted(&entry.scenario, e.to_string()), None),
                };
                let episode_env = EpisodeEnv {
                    registry: env.registry,
                    detector: env.detector,
                    kb: env.kb,
                    llm: llm.as_ref(),
                    config: &config.agent,
                };
                match run_episode(&entry.scenario, &episode_env) {
                    Ok(r) => (
                        EpisodeRow::score(&entry.scenario, &r, config.max_root_causes),
                        Some(r.transcript),
                    ),
                    Err(e) => (EpisodeRow::aborted(&entry.scenario, e.to_string()), None),
                }
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(results.len());
    let mut transcripts = Vec::with_capacity(results.len());
    for (row, t) in results {
        transcripts.push((row.scenario.clone(), t));
        rows.push(row);
    }
    Ok(BenchmarkRun {
        report: BenchmarkReport::new(config.clone(), rows),
        transcripts,
    })
}
