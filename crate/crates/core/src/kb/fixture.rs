use serde::Deserialize;

use super::{HistoricalIncident, KnowledgeBase, SopDoc};

const BUNDLE: &str = include_str!("../../fixtures/kb_bundle.toml");

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Bundle {
    #[serde(default)]
    sop: Vec<SopDoc>,
    #[serde(default)]
    incident: Vec<HistoricalIncident>,
}

/// The shipped SOP and incident collection for the online-boutique fixture.
pub fn builtin(dim: usize) -> KnowledgeBase {
    let bundle: Bundle = toml::from_str(BUNDLE).expect("bundled knowledge base parses");
    let mut kb = KnowledgeBase::new(dim);
    for s in bundle.sop {
        kb.add_sop(s).expect("bundled SOP is valid");
    }
    for i in bundle.incident {
        kb.add_incident(i).expect("bundled incident is valid");
    }
    kb
}
