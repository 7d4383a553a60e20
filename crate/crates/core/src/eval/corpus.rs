//! Corpus manifests: TOML listing scenario files and optional scripts.
//!
//! ```toml
//! [[scenario]]
//! file = "scenarios/000-cpu-stress.json"
//! script = "scripts/default/000-cpu-stress.toml"
//! ```
//!
//! Paths are relative to the manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::llm::Script;
use crate::sandbox::EpisodeScenario;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub scenario: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub file: PathBuf,
    pub scenario: EpisodeScenario,
    pub script: Option<Script>,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn load(manifest_path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(manifest_path).map_err(|e| {
            EvalError::Manifest(format!("cannot read {}: {e}", manifest_path.display()))
        })?;
        let manifest: Manifest = toml::from_str(&text)
            .map_err(|e| EvalError::Manifest(format!("{}: {e}", manifest_path.display())))?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let entries = manifest
            .scenario
            .iter()
            .map(|m| {
                let file = base.join(&m.file);
                let scenario = EpisodeScenario::load(&file)
                    .map_err(|e| EvalError::Manifest(format!("{}: {e}", file.display())))?;
                let script = m
                    .script
                    .as_ref()
                    .map(|s| {
                        let p = base.join(s);
                        Script::load(&p)
                            .map_err(|e| EvalError::Manifest(format!("{}: {e}", p.display())))
                    })
                    .transpose()?;
                Ok(CorpusEntry {
                    file,
                    scenario,
                    script,
                })
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Manifest text for `entries`; paths stay as given.
pub fn render_manifest(entries: &[ManifestEntry]) -> String {
    toml::to_string(&Manifest {
        scenario: entries.to_vec(),
    })
    .expect("manifest serializes")
}
