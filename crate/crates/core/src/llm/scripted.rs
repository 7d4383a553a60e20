use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::embedding::{hash_embedding, HASH_EMBEDDING_DIM};
use super::{check_messages, ChatMessage, LlmBackend, LlmError};
use crate::kb::EmbeddingVector;

/// One authored response.
///
/// `match_key` is tested against the content of the latest message: `"*"`
/// matches anything, any other key matches when it occurs as a substring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match")]
    pub match_key: String,
    pub response: String,
    #[serde(rename = "once", default)]
    pub consume_once: bool,
}

impl ScriptEntry {
    pub fn new(match_key: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            match_key: match_key.into(),
            response: response.into(),
            consume_once: false,
        }
    }

    pub fn once(match_key: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            consume_once: true,
            ..Self::new(match_key, response)
        }
    }

    fn matches(&self, prompt: &str) -> bool {
        self.match_key == "*" || prompt.contains(&self.match_key)
    }
}

/// Script file contents: ordered entries plus optional embedding overrides
/// keyed by exact text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    #[serde(rename = "entry", default)]
    pub entries: Vec<ScriptEntry>,
    #[serde(default)]
    pub embeddings: BTreeMap<String, Vec<f64>>,
}

impl Script {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self {
            entries,
            embeddings: BTreeMap::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, LlmError> {
        toml::from_str(text).map_err(|e| LlmError::Validation(format!("invalid script: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            LlmError::Validation(format!("cannot read script {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("script serializes")
    }
}

/// Deterministic stand-in for a language model.
#[derive(Debug)]
pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    consumed: Mutex<Vec<bool>>,
    overrides: BTreeMap<String, EmbeddingVector>,
    dim: usize,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        let overrides = script
            .embeddings
            .into_iter()
            .filter_map(|(k, v)| EmbeddingVector::new(v).ok().map(|e| (k, e)))
            .collect();
        Self {
            consumed: Mutex::new(vec![false; script.entries.len()]),
            entries: script.entries,
            overrides,
            dim: HASH_EMBEDDING_DIM,
        }
    }

    /// Backend with an empty script: completions fail, embeddings work.
    pub fn embeddings_only() -> Self {
        Self::new(Script::default())
    }

    pub fn with_override(mut self, text: impl Into<String>, vector: EmbeddingVector) -> Self {
        self.overrides.insert(text.into(), vector);
        self
    }

    pub fn remaining_once_entries(&self) -> usize {
        let consumed = self.consumed.lock().expect("script lock");
        self.entries
            .iter()
            .zip(consumed.iter())
            .filter(|(e, c)| e.consume_once && !**c)
            .count()
    }
}

impl LlmBackend for ScriptedBackend {
    fn id(&self) -> String {
        format!("scripted-hash-{}", self.dim)
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        check_messages(messages)?;
        let prompt = &messages.last().expect("checked non-empty").content;
        let mut consumed = self.consumed.lock().expect("script lock");
        for (i, entry) in self.entries.iter().enumerate() {
            if consumed[i] || !entry.matches(prompt) {
                continue;
            }
            if entry.consume_once {
                consumed[i] = true;
            }
            return Ok(entry.response.clone());
        }
        Err(LlmError::ScriptExhausted {
            prompt_head: prompt.chars().take(60).collect(),
        })
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError> {
        if text.trim().is_empty() {
            return Err(LlmError::Validation("cannot embed empty text".into()));
        }
        if let Some(v) = self.overrides.get(text) {
            return Ok(v.clone());
        }
        Ok(hash_embedding(text, self.dim))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::cosine_similarity;

    fn ask(b: &ScriptedBackend, prompt: &str) -> Result<String, LlmError> {
        b.complete(&[ChatMessage::system("sys"), ChatMessage::user(prompt)])
    }

    #[test]
    fn wildcard_answers_everything() {
        let b = ScriptedBackend::new(Script::new(vec![ScriptEntry::new("*", "OK")]));
        assert_eq!(ask(&b, "anything").unwrap(), "OK");
        assert_eq!(ask(&b, "something else").unwrap(), "OK");
    }

    #[test]
    fn empty_script_is_exhausted() {
        let b = ScriptedBackend::new(Script::default());
        assert!(matches!(
            ask(&b, "hello"),
            Err(LlmError::ScriptExhausted { .. })
        ));
    }

    #[test]
    fn first_match_in_declaration_order() {
        let b = ScriptedBackend::new(Script::new(vec![
            ScriptEntry::new("alpha", "first"),
            ScriptEntry::new("beta", "second"),
        ]));
        // only the second key occurs, so the first entry is skipped
        assert_eq!(ask(&b, "prompt with beta inside").unwrap(), "second");
        // both keys occur: declaration order wins
        assert_eq!(ask(&b, "alpha and beta").unwrap(), "first");
    }

    #[test]
    fn consume_once_entries_fire_once() {
        let b = ScriptedBackend::new(Script::new(vec![
            ScriptEntry::once("k", "one"),
            ScriptEntry::once("k", "two"),
        ]));
        assert_eq!(b.remaining_once_entries(), 2);
        assert_eq!(ask(&b, "k").unwrap(), "one");
        assert_eq!(ask(&b, "k").unwrap(), "two");
        assert!(ask(&b, "k").is_err());
        assert_eq!(b.remaining_once_entries(), 0);
    }

    #[test]
    fn only_latest_message_is_matched() {
        let b = ScriptedBackend::new(Script::new(vec![ScriptEntry::new("needle", "hit")]));
        let msgs = [ChatMessage::user("needle"), ChatMessage::user("haystack")];
        assert!(b.complete(&msgs).is_err());
    }

    #[test]
    fn embed_rejects_empty_and_honours_overrides() {
        let v = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let b = ScriptedBackend::embeddings_only().with_override("pinned", v.clone());
        assert!(matches!(b.embed(""), Err(LlmError::Validation(_))));
        assert_eq!(b.embed("pinned").unwrap(), v);
        assert_eq!(b.embed("other").unwrap().dim(), 64);
    }

    #[test]
    fn distinct_short_strings_recorded_similarity() {
        // Frozen from the hash embedding; guards against accidental changes
        // to the feature scheme.
        let b = ScriptedBackend::embeddings_only();
        let s = cosine_similarity(&b.embed("cpu").unwrap(), &b.embed("memory").unwrap()).unwrap();
        assert!(s < 1.0);
        assert!((s - FROZEN_CPU_MEMORY).abs() < 1e-12, "got {s:.17}");
    }

    const FROZEN_CPU_MEMORY: f64 = 0.04198762147385605;

    #[test]
    fn script_toml_round_trip() {
        let text = r#"
[[entry]]
match = "ROLE: main.select"
response = "1"
once = true

[[entry]]
match = "*"
response = "fallback"

[embeddings]
"pinned text" = [0.0, 1.0]
"#;
        let s = Script::from_toml(text).unwrap();
        assert_eq!(s.entries.len(), 2);
        assert!(s.entries[0].consume_once);
        assert!(!s.entries[1].consume_once);
        assert_eq!(Script::from_toml(&s.to_toml()).unwrap(), s);
    }
}
