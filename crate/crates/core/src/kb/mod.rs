//! Knowledge base of SOPs and historical incidents.
//!
//! Retrieval is an exhaustive cosine scan over name (SOP) or manifestation
//! (incident) embeddings. Results are cut at `k`, filtered by a score
//! threshold, and ordered by score descending with ties broken by id.
//! Embeddings are computed on first use and cached per backend.

mod fixture;
mod store;
mod vector;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::{LlmBackend, LlmError};

pub use fixture::builtin;
pub use store::{parse_incident_file, parse_sop_file, render_incident_file, render_sop_file};
pub use vector::{cosine_similarity, EmbeddingVector};

pub const DEFAULT_TOP_K: usize = 3;
pub const DEFAULT_THRESHOLD: f64 = 0.3;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("degenerate vector: all components are zero")]
    DegenerateVector,
    #[error("validation error: {0}")]
    Validation(String),
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

/// A named diagnostic procedure. `level` 0 is the most general.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SopDoc {
    pub id: String,
    pub name: String,
    pub level: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub steps: Vec<String>,
}

impl SopDoc {
    pub fn new(id: impl Into<String>, name: impl Into<String>, steps: Vec<String>) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            level: 0,
            parent: None,
            steps,
        }
    }

    pub fn validate(&self) -> Result<(), KbError> {
        validate_id(&self.id)?;
        if self.name.trim().is_empty() {
            return Err(KbError::Validation(format!(
                "SOP {}: name is empty",
                self.id
            )));
        }
        if self.steps.is_empty() {
            return Err(KbError::Validation(format!(
                "SOP {}: steps is empty",
                self.id
            )));
        }
        if let Some(i) = self.steps.iter().position(|s| s.trim().is_empty()) {
            return Err(KbError::Validation(format!(
                "SOP {}: step {} is empty",
                self.id,
                i + 1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoricalIncident {
    pub id: String,
    /// A `FaultType` name or free text.
    pub fault_type: String,
    pub manifestation: String,
}

impl HistoricalIncident {
    pub fn validate(&self) -> Result<(), KbError> {
        validate_id(&self.id)?;
        if self.manifestation.trim().is_empty() {
            return Err(KbError::Validation(format!(
                "incident {}: manifestation is empty",
                self.id
            )));
        }
        Ok(())
    }
}

fn validate_id(id: &str) -> Result<(), KbError> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(KbError::Validation(format!(
            "invalid id {id:?}: use letters, digits, '-', '_' or '.'"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HitKind {
    Sop,
    Incident,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub item_id: String,
    pub score: f64,
    pub kind: HitKind,
}

/// Embedding cache keyed by `backend id : sha256(text)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingCache {
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingCache {
    pub fn key(backend_id: &str, text: &str) -> String {
        let digest = Sha256::digest(text.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        format!("{backend_id}:{hex}")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug)]
pub struct KnowledgeBase {
    dim: usize,
    sops: Vec<SopDoc>,
    incidents: Vec<HistoricalIncident>,
    cache: Mutex<EmbeddingCache>,
    root: Option<PathBuf>,
}

impl Clone for KnowledgeBase {
    fn clone(&self) -> Self {
        Self {
            dim: self.dim,
            sops: self.sops.clone(),
            incidents: self.incidents.clone(),
            cache: Mutex::new(self.cache.lock().expect("cache lock").clone()),
            root: self.root.clone(),
        }
    }
}

impl KnowledgeBase {
    /// Empty in-memory knowledge base for embeddings of dimension `dim`.
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            sops: Vec::new(),
            incidents: Vec::new(),
            cache: Mutex::new(EmbeddingCache::default()),
            root: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    /// Copy that no longer writes through to disk.
    pub fn detached(&self) -> Self {
        Self {
            root: None,
            ..self.clone()
        }
    }

    pub fn sops(&self) -> &[SopDoc] {
        &self.sops
    }

    pub fn incidents(&self) -> &[HistoricalIncident] {
        &self.incidents
    }

    pub fn get_sop(&self, id: &str) -> Option<&SopDoc> {
        self.sops.iter().find(|s| s.id == id)
    }

    pub fn get_incident(&self, id: &str) -> Option<&HistoricalIncident> {
        self.incidents.iter().find(|s| s.id == id)
    }

    pub fn add_sop(&mut self, doc: SopDoc) -> Result<String, KbError> {
        doc.validate()?;
        if self.get_sop(&doc.id).is_some() {
            return Err(KbError::Validation(format!("duplicate SOP id {}", doc.id)));
        }
        if let Some(root) = &self.root {
            store::write_sop(root, &doc)?;
        }
        let id = doc.id.clone();
        self.sops.push(doc);
        if let Some(root) = &self.root {
            store::write_index(root, &self.sops, &self.incidents)?;
        }
        Ok(id)
    }

    pub fn add_incident(&mut self, inc: HistoricalIncident) -> Result<String, KbError> {
        inc.validate()?;
        if self.get_incident(&inc.id).is_some() {
            return Err(KbError::Validation(format!(
                "duplicate incident id {}",
                inc.id
            )));
        }
        if let Some(root) = &self.root {
            store::write_incident(root, &inc)?;
        }
        let id = inc.id.clone();
        self.incidents.push(inc);
        if let Some(root) = &self.root {
            store::write_index(root, &self.sops, &self.incidents)?;
        }
        Ok(id)
    }

    /// Removes every SOP, leaving incidents untouched. In-memory only.
    pub fn clear_sops(&mut self) {
        self.sops.clear();
    }

    /// Opens (or starts) a knowledge base directory. A missing directory
    /// yields an empty store that is created on first write.
    pub fn open(root: impl Into<PathBuf>, dim: usize) -> Result<Self, KbError> {
        let root = root.into();
        let (sops, incidents, cache) = store::load(&root)?;
        let kb = Self {
            dim,
            sops,
            incidents,
            cache: Mutex::new(cache),
            root: Some(root),
        };
        for s in &kb.sops {
            s.validate()?;
        }
        for i in &kb.incidents {
            i.validate()?;
        }
        Ok(kb)
    }

    /// Writes the embedding cache next to the documents.
    pub fn flush_cache(&self) -> Result<(), KbError> {
        if let Some(root) = &self.root {
            store::write_cache(root, &self.cache.lock().expect("cache lock"))?;
        }
        Ok(())
    }

    /// Writes every document, the index and the cache under `root`.
    pub fn save_to(&self, root: &Path) -> Result<(), KbError> {
        for s in &self.sops {
            store::write_sop(root, s)?;
        }
        for i in &self.incidents {
            store::write_incident(root, i)?;
        }
        store::write_index(root, &self.sops, &self.incidents)?;
        store::write_cache(root, &self.cache.lock().expect("cache lock"))
    }

    pub fn cached_embeddings(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    /// Cached embedding of `text` under `backend`.
    pub fn embedding(
        &self,
        text: &str,
        backend: &dyn LlmBackend,
    ) -> Result<EmbeddingVector, KbError> {
        let key = EmbeddingCache::key(&backend.id(), text);
        if let Some(v) = self.cache.lock().expect("cache lock").entries.get(&key) {
            return EmbeddingVector::new(v.clone());
        }
        let v = backend.embed(text)?;
        if v.dim() != self.dim {
            return Err(KbError::Dimension {
                expected: self.dim,
                found: v.dim(),
            });
        }
        self.cache
            .lock()
            .expect("cache lock")
            .entries
            .insert(key, v.values().to_vec());
        Ok(v)
    }

    fn rank<'a, T>(
        &self,
        items: &'a [T],
        text_of: impl Fn(&T) -> &str,
        id_of: impl Fn(&T) -> &str,
        query: &str,
        k: usize,
        threshold: f64,
        backend: &dyn LlmBackend,
    ) -> Result<Vec<(&'a T, f64)>, KbError> {
        if k == 0 {
            return Err(KbError::Validation("k must be positive".into()));
        }
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let q = self.embedding(query, backend)?;
        let mut scored = Vec::with_capacity(items.len());
        for item in items {
            let e = self.embedding(text_of(item), backend)?;
            let s = cosine_similarity(&q, &e)?;
            if s >= threshold {
                scored.push((item, s));
            }
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| id_of(a.0).cmp(id_of(b.0))));
        scored.truncate(k);
        Ok(scored)
    }

    /// Top-`k` SOPs whose name similarity to `query` is at least `threshold`.
    pub fn match_sop(
        &self,
        query: &str,
        k: usize,
        threshold: f64,
        backend: &dyn LlmBackend,
    ) -> Result<Vec<(SopDoc, f64)>, KbError> {
        Ok(self
            .rank(
                &self.sops,
                |s| &s.name,
                |s| &s.id,
                query,
                k,
                threshold,
                backend,
            )?
            .into_iter()
            .map(|(s, score)| (s.clone(), score))
            .collect())
    }

    /// Top-`k` historical incidents whose manifestation resembles `observation`.
    pub fn match_observation(
        &self,
        observation: &str,
        k: usize,
        threshold: f64,
        backend: &dyn LlmBackend,
    ) -> Result<Vec<(HistoricalIncident, f64)>, KbError> {
        Ok(self
            .rank(
                &self.incidents,
                |i| &i.manifestation,
                |i| &i.id,
                observation,
                k,
                threshold,
                backend,
            )?
            .into_iter()
            .map(|(i, score)| (i.clone(), score))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ScriptedBackend, HASH_EMBEDDING_DIM};

    fn sop(id: &str, name: &str) -> SopDoc {
        SopDoc::new(id, name, vec!["check something".into()])
    }

    #[test]
    fn add_then_get_round_trips() {
        let mut kb = KnowledgeBase::new(HASH_EMBEDDING_DIM);
        let doc = SopDoc {
            level: 2,
            parent: Some("root".into()),
            ..sop("a", "Alpha")
        };
        let id = kb.add_sop(doc.clone()).unwrap();
        assert_eq!(kb.get_sop(&id), Some(&doc));
    }

    #[test]
    fn empty_steps_rejected() {
        let mut kb = KnowledgeBase::new(HASH_EMBEDDING_DIM);
        let err = kb.add_sop(SopDoc::new("x", "X", vec![])).unwrap_err();
        assert!(matches!(err, KbError::Validation(_)));
        let err = kb
            .add_incident(HistoricalIncident {
                id: "i".into(),
                fault_type: "CpuStress".into(),
                manifestation: " ".into(),
            })
            .unwrap_err();
        assert!(matches!(err, KbError::Validation(_)));
    }

    #[test]
    fn list_keeps_insertion_order() {
        let mut kb = KnowledgeBase::new(HASH_EMBEDDING_DIM);
        for id in ["c", "a", "b"] {
            kb.add_sop(sop(id, id)).unwrap();
        }
        let ids: Vec<_> = kb.sops().iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn duplicate_and_bad_ids_rejected() {
        let mut kb = KnowledgeBase::new(HASH_EMBEDDING_DIM);
        kb.add_sop(sop("a", "A")).unwrap();
        assert!(kb.add_sop(sop("a", "B")).is_err());
        assert!(kb.add_sop(sop("../etc", "B")).is_err());
    }

    #[test]
    fn self_match_and_empty_store() {
        let backend = ScriptedBackend::embeddings_only();
        let mut kb = KnowledgeBase::new(HASH_EMBEDDING_DIM);
        assert!(kb
            .match_sop("anything", 3, 0.3, &backend)
            .unwrap()
            .is_empty());
        assert!(kb
            .match_observation("anything", 3, 0.3, &backend)
            .unwrap()
            .is_empty());
        kb.add_sop(sop("cpu", "Pod cpu usage above threshold"))
            .unwrap();
        kb.add_sop(sop("net", "Network partition between services"))
            .unwrap();
        let hits = kb
            .match_sop("Pod cpu usage above threshold", 1, 0.5, &backend)
            .unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0.id, "cpu");
        assert!((hits[0].1 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_k_is_rejected() {
        let backend = ScriptedBackend::embeddings_only();
        let kb = KnowledgeBase::new(HASH_EMBEDDING_DIM);
        assert!(kb.match_sop("q", 0, 0.3, &backend).is_err());
    }

    #[test]
    fn ties_break_by_id() {
        let pinned = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let backend = ScriptedBackend::embeddings_only()
            .with_override("q", pinned.clone())
            .with_override("one", pinned.clone())
            .with_override("two", pinned);
        let mut kb = KnowledgeBase::new(2);
        kb.add_sop(sop("zeta", "one")).unwrap();
        kb.add_sop(sop("alpha", "two")).unwrap();
        let hits = kb.match_sop("q", 5, 0.0, &backend).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.0.id.as_str()).collect();
        assert_eq!(ids, ["alpha", "zeta"]);
    }

    #[test]
    fn dimension_mismatch_surfaces() {
        let backend = ScriptedBackend::embeddings_only();
        let mut kb = KnowledgeBase::new(8);
        kb.add_sop(sop("a", "A")).unwrap();
        assert!(matches!(
            kb.match_sop("q", 1, 0.0, &backend),
            Err(KbError::Dimension {
                expected: 8,
                found: 64
            })
        ));
    }

    #[test]
    fn embeddings_are_cached() {
        let backend = ScriptedBackend::embeddings_only();
        let mut kb = KnowledgeBase::new(HASH_EMBEDDING_DIM);
        kb.add_sop(sop("a", "Alpha")).unwrap();
        kb.match_sop("q", 1, 0.0, &backend).unwrap();
        assert_eq!(kb.cached_embeddings(), 2);
        kb.match_sop("q", 1, 0.0, &backend).unwrap();
        assert_eq!(kb.cached_embeddings(), 2);
    }
}
