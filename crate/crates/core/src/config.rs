//! Top-level run configuration.
//!
//! One TOML file covers the backend, detector thresholds, the knowledge
//! base, agent settings and evaluation defaults. Every section and field is
//! optional; omitted values take their defaults.
//!
//! ```toml
//! [backend]
//! kind = "scripted"
//!
//! [kb]
//! path = "kb"
//! embedding_dim = 64
//!
//! [agent]
//! max_steps = 20
//!
//! [agent.ablations]
//! sop_flow = false
//!
//! [eval]
//! sigma = 0.1
//! workers = 4
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::AgentConfig;
use crate::eval::{Aggregation, EvalConfig, DEFAULT_SIGMA};
use crate::kb::{builtin, KbError, KnowledgeBase};
use crate::llm::{BackendConfig, HASH_EMBEDDING_DIM};
use crate::tools::{DetectorConfig, MAX_ROOT_CAUSES};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Kb(#[from] KbError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KbConfig {
    /// Knowledge base directory. Unset means the bundled collection.
    pub path: Option<PathBuf>,
    pub embedding_dim: usize,
}

impl Default for KbConfig {
    fn default() -> Self {
        Self {
            path: None,
            embedding_dim: HASH_EMBEDDING_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub sigma: f64,
    pub max_root_causes: usize,
    pub aggregation: Aggregation,
    pub workers: usize,
    pub corpus: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            max_root_causes: MAX_ROOT_CAUSES,
            aggregation: Aggregation::Corpus,
            workers: 0,
            corpus: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub backend: BackendConfig,
    pub detector: DetectorConfig,
    pub kb: KbConfig,
    pub agent: AgentConfig,
    pub eval: EvalSection,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut c = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut c.kb.path, &mut c.eval.corpus].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.detector.validate().map_err(ConfigError::Invalid)?;
        if self.kb.embedding_dim == 0 {
            return Err(ConfigError::Invalid(
                "kb.embedding_dim must be positive".into(),
            ));
        }
        self.eval_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            sigma: self.eval.sigma,
            max_root_causes: self.eval.max_root_causes,
            aggregation: self.eval.aggregation,
            workers: self.eval.workers,
            corpus: self.eval.corpus.clone(),
            agent: self.agent.clone(),
            backend: self.backend.clone(),
        }
    }

    /// The configured knowledge base directory, or the bundled collection.
    pub fn open_kb(&self) -> Result<KnowledgeBase, ConfigError> {
        Ok(match &self.kb.path {
            Some(p) => KnowledgeBase::open(p, self.kb.embedding_dim)?,
            None => builtin(self.kb.embedding_dim),
        })
    }
}
