//! On-disk layout:
//!
//! ```text
//! <root>/index.toml          insertion order of SOP and incident ids
//! <root>/sops/<id>.toml      one SOP per file
//! <root>/incidents/<id>.toml one incident per file
//! <root>/embeddings.json     embedding cache
//! ```
//!
//! Files present on disk but missing from the index are appended after the
//! indexed ones, in file-name order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EmbeddingCache, HistoricalIncident, KbError, SopDoc};

const SOP_DIR: &str = "sops";
const INCIDENT_DIR: &str = "incidents";
const INDEX_FILE: &str = "index.toml";
const CACHE_FILE: &str = "embeddings.json";

#[derive(Debug, Default, Serialize, Deserialize)]
struct Index {
    #[serde(default)]
    sops: Vec<String>,
    #[serde(default)]
    incidents: Vec<String>,
}

fn quote(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

/// Canonical SOP file text. `parse_sop_file(render_sop_file(d)) == d`.
pub fn render_sop_file(doc: &SopDoc) -> String {
    let mut out = String::new();
    out.push_str(&format!("id = {}\n", quote(&doc.id)));
    out.push_str(&format!("name = {}\n", quote(&doc.name)));
    out.push_str(&format!("level = {}\n", doc.level));
    if let Some(p) = &doc.parent {
        out.push_str(&format!("parent = {}\n", quote(p)));
    }
    out.push_str("steps = [\n");
    for s in &doc.steps {
        out.push_str(&format!("    {},\n", quote(s)));
    }
    out.push_str("]\n");
    out
}

pub fn render_incident_file(inc: &HistoricalIncident) -> String {
    format!(
        "id = {}\nfault_type = {}\nmanifestation = {}\n",
        quote(&inc.id),
        quote(&inc.fault_type),
        quote(&inc.manifestation)
    )
}

pub fn parse_sop_file(text: &str) -> Result<SopDoc, String> {
    let doc: SopDoc = toml::from_str(text).map_err(|e| e.to_string())?;
    doc.validate().map_err(|e| e.to_string())?;
    Ok(doc)
}

pub fn parse_incident_file(text: &str) -> Result<HistoricalIncident, String> {
    let inc: HistoricalIncident = toml::from_str(text).map_err(|e| e.to_string())?;
    inc.validate().map_err(|e| e.to_string())?;
    Ok(inc)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KbError + '_ {
    move |source| KbError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), KbError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

pub(super) fn write_sop(root: &Path, doc: &SopDoc) -> Result<(), KbError> {
    write_file(
        &root.join(SOP_DIR).join(format!("{}.toml", doc.id)),
        &render_sop_file(doc),
    )
}

pub(super) fn write_incident(root: &Path, inc: &HistoricalIncident) -> Result<(), KbError> {
    write_file(
        &root.join(INCIDENT_DIR).join(format!("{}.toml", inc.id)),
        &render_incident_file(inc),
    )
}

pub(super) fn write_index(
    root: &Path,
    sops: &[SopDoc],
    incidents: &[HistoricalIncident],
) -> Result<(), KbError> {
    let index = Index {
        sops: sops.iter().map(|s| s.id.clone()).collect(),
        incidents: incidents.iter().map(|i| i.id.clone()).collect(),
    };
    let text = toml::to_string(&index).expect("index serializes");
    write_file(&root.join(INDEX_FILE), &text)
}

pub(super) fn write_cache(root: &Path, cache: &EmbeddingCache) -> Result<(), KbError> {
    let text = serde_json::to_string(cache).expect("cache serializes");
    write_file(&root.join(CACHE_FILE), &text)
}

fn list_toml(dir: &Path) -> Result<Vec<PathBuf>, KbError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    Ok(files)
}

fn load_docs<T>(
    dir: &Path,
    order: &[String],
    parse: impl Fn(&str) -> Result<T, String>,
    id_of: impl Fn(&T) -> &str,
) -> Result<Vec<T>, KbError> {
    let mut docs = Vec::new();
    for path in list_toml(dir)? {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let doc = parse(&text).map_err(|message| KbError::Parse {
            path: path.clone(),
            message,
        })?;
        docs.push(doc);
    }
    let rank = |d: &T| {
        order
            .iter()
            .position(|id| id == id_of(d))
            .unwrap_or(usize::MAX)
    };
    // stable: unindexed files keep file-name order
    docs.sort_by_key(|d| rank(d));
    Ok(docs)
}

pub(super) fn load(
    root: &Path,
) -> Result<(Vec<SopDoc>, Vec<HistoricalIncident>, EmbeddingCache), KbError> {
    let index_path = root.join(INDEX_FILE);
    let index: Index = if index_path.is_file() {
        let text = fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
        toml::from_str(&text).map_err(|e| KbError::Parse {
            path: index_path.clone(),
            message: e.to_string(),
        })?
    } else {
        Index::default()
    };
    let sops = load_docs(&root.join(SOP_DIR), &index.sops, parse_sop_file, |s| &s.id)?;
    let incidents = load_docs(
        &root.join(INCIDENT_DIR),
        &index.incidents,
        parse_incident_file,
        |i| &i.id,
    )?;
    let cache_path = root.join(CACHE_FILE);
    let cache = if cache_path.is_file() {
        let text = fs::read_to_string(&cache_path).map_err(io_err(&cache_path))?;
        serde_json::from_str(&text).map_err(|e| KbError::Parse {
            path: cache_path.clone(),
            message: e.to_string(),
        })?
    } else {
        EmbeddingCache::default()
    };
    Ok((sops, incidents, cache))
}
