//! Agent personas: system prompts, role tags and reply parsers.
//!
//! Every prompt's user message starts with a `ROLE: ...` line so scripted
//! backends can address each persona separately.

use serde::{Deserialize, Serialize};

use super::action_set::ActionCandidate;
use crate::sandbox::FaultType;
use crate::tools::{parse_call, Registry, RootCause, ToolCall, SPEAK};

pub const MAIN_THOUGHT_TAG: &str = "ROLE: main.thought";
pub const MAIN_SELECT_TAG: &str = "ROLE: main.select";
/// Direct action choice, used when there is no candidate set.
pub const MAIN_ACT_TAG: &str = "ROLE: main.act";
pub const ACTION_TAG: &str = "ROLE: action.propose";
pub const OB_TAG: &str = "ROLE: ob.classify";
pub const JUDGE_TAG: &str = "ROLE: judge.verdict";

pub const MAX_HYPOTHESES: usize = 3;

/// Prompt text describing the SOP flow. Removed by the flow ablations.
pub const FLOW_PROMPT: &str = "\
SOP flow:
- Start with match_sop on the alert text.
- If an SOP matched, call generate_sop_code for it; if none matched, call generate_sop first and then generate_sop_code.
- Run the program with run_sop. If code generation or the run fails, call generate_sop_code again.
- Pass the run findings to match_observation.
- Call Speak once the root cause is confirmed. At most 3 root causes.";

fn with_flow(mut head: String, flow: bool, registry: &Registry) -> String {
    if flow {
        head.push_str("\n\n");
        head.push_str(FLOW_PROMPT);
    }
    head.push_str("\n\nTools:\n");
    head.push_str(&registry.catalog_text());
    head
}

pub fn main_system_prompt(registry: &Registry, flow: bool) -> String {
    with_flow(
        "You are the MainAgent coordinating root cause analysis of an incident in a microservice system. \
Each step you think, then pick exactly one action."
            .to_string(),
        flow,
        registry,
    )
}

pub fn action_system_prompt(registry: &Registry, flow: bool, max: usize) -> String {
    with_flow(
        format!(
            "You are the ActionAgent. Propose up to {max} next actions, one per line, \
written as tool(arg=\"value\") | reason."
        ),
        flow,
        registry,
    )
}

pub fn ob_system_prompt() -> String {
    let types: Vec<&str> = FaultType::ALL.iter().map(|t| t.name()).collect();
    format!(
        "You are the ObAgent. Given an observation and similar historical incidents, list up to \
{MAX_HYPOTHESES} likely fault types, one per line, as `type: <fault type> confidence: <text>`.\n\
Known fault types: {}",
        types.join(", ")
    )
}

pub fn judge_system_prompt() -> String {
    "You are the JudgeAgent. Decide whether the evidence identifies the root cause. Answer \
`FOUND: location=<component> type=<fault type>; ...; summary: <text>` or `NOT FOUND: <reason>`."
        .to_string()
}

/// Where the first call of a line ends: the matching `)` of the first `(`,
/// or the end of a bare tool name. Quotes are respected.
fn split_call(line: &str) -> (&str, &str) {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        if in_str {
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '(' => depth += 1,
            ')' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    return line.split_at(i + 1);
                }
            }
            c if depth == 0 && !(c.is_alphanumeric() || c == '_') => return line.split_at(i),
            _ => {}
        }
    }
    (line, "")
}

fn strip_bullet(line: &str) -> &str {
    let t = line.trim_start();
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim_start();
        }
    }
    t.strip_prefix("- ")
        .or_else(|| t.strip_prefix("* "))
        .unwrap_or(t)
        .trim_start()
}

/// One tool call at the start of `line`, plus whatever follows it.
pub fn parse_call_line(line: &str) -> Result<(ToolCall, String), String> {
    let body = strip_bullet(line).trim_matches('`');
    let (call, rest) = split_call(body);
    let call = parse_call(call.trim_end_matches('`'))?;
    let rationale = rest
        .trim_start_matches('`')
        .trim()
        .trim_start_matches(['|', '#', ':', '-'])
        .trim();
    Ok((call, rationale.to_string()))
}

/// Parses an ActionAgent reply. Invalid candidates are dropped with a note.
pub fn parse_candidates(
    reply: &str,
    registry: &Registry,
    max: usize,
) -> (Vec<ActionCandidate>, Vec<String>) {
    let mut out: Vec<ActionCandidate> = Vec::new();
    let mut notes = Vec::new();
    for line in reply.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let parsed = parse_call_line(line).and_then(|(call, why)| {
            registry.validate_call(&call).map_err(|e| e.to_string())?;
            Ok((call, why))
        });
        match parsed {
            Ok((call, why)) if out.iter().any(|c| c.call == call) => {
                notes.push(format!("duplicate proposal {call} ignored ({why})"));
            }
            Ok((call, why)) => out.push(ActionCandidate::proposed(call, why)),
            Err(e) => notes.push(format!("dropped proposal {line:?}: {e}")),
        }
    }
    if out.len() > max {
        for c in out.drain(max..) {
            notes.push(format!("proposal {} beyond {max} ignored", c.call));
        }
    }
    (out, notes)
}

/// First integer in the reply, as written (1-based).
pub fn parse_selection(reply: &str) -> Option<usize> {
    let digits: String = reply
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(char::is_ascii_digit)
        .collect();
    digits.parse().ok()
}

/// First line of a direct-choice reply that parses as a registered call.
pub fn parse_direct_action(reply: &str, registry: &Registry) -> Result<ToolCall, String> {
    let mut last_err = "empty reply".to_string();
    for line in reply.lines().map(str::trim).filter(|l| !l.is_empty()) {
        match parse_call_line(line) {
            Ok((call, _)) => match registry.validate_call(&call) {
                Ok(_) => return Ok(call),
                Err(e) => last_err = e.to_string(),
            },
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Canonical fault type name when recognised, free text otherwise.
    pub fault_type: String,
    pub confidence: String,
}

fn canonical_type(s: &str) -> String {
    s.parse::<FaultType>()
        .map(|t| t.name().to_string())
        .unwrap_or_else(|_| s.to_string())
}

/// Reads `type: X [confidence: Y]` lines, keeping at most three.
pub fn parse_hypotheses(reply: &str) -> Vec<Hypothesis> {
    let mut out: Vec<Hypothesis> = Vec::new();
    for line in reply.lines() {
        let lower = line.to_ascii_lowercase();
        let Some(at) = lower.find("type:") else {
            continue;
        };
        let rest = &line[at + 5..];
        let (ty, conf) = match rest.to_ascii_lowercase().find("confidence:") {
            Some(c) => (&rest[..c], rest[c + 11..].trim()),
            None => (rest, ""),
        };
        let ty = ty.trim().trim_end_matches([',', ';']).trim();
        if ty.is_empty() {
            continue;
        }
        let fault_type = canonical_type(ty);
        if out.iter().any(|h| h.fault_type == fault_type) {
            continue;
        }
        out.push(Hypothesis {
            fault_type,
            confidence: conf.to_string(),
        });
    }
    out.truncate(MAX_HYPOTHESES);
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub found: bool,
    pub summary: String,
    pub causes: Vec<RootCause>,
}

impl JudgeVerdict {
    pub fn found_with(causes: &[(&str, &str)], summary: &str) -> Self {
        Self {
            found: true,
            summary: summary.into(),
            causes: causes
                .iter()
                .map(|(l, t)| RootCause {
                    location: l.to_string(),
                    fault_type: canonical_type(t),
                    confidence: 1.0,
                })
                .collect(),
        }
    }

    /// The Speak call carrying this verdict's causes.
    pub fn speak_call(&self) -> ToolCall {
        let causes: Vec<String> = self
            .causes
            .iter()
            .map(|c| format!("{}:{}", c.location, c.fault_type))
            .collect();
        ToolCall::new(SPEAK)
            .arg("causes", causes.join("; "))
            .arg("explanation", self.summary.as_str())
    }
}

const LOCATION_KEYS: [&str; 5] = ["location", "pod", "node", "service", "component"];

/// Parses `FOUND: pod=X type=Y; ...; summary: text` or `NOT FOUND ...`.
/// Anything else, including FOUND without a usable cause, is not found.
pub fn parse_verdict(reply: &str) -> Result<JudgeVerdict, String> {
    let text = reply.trim();
    let upper = text.to_ascii_uppercase();
    if upper.starts_with("NOT FOUND") {
        let reason = text[9..].trim().trim_start_matches(':').trim();
        return Ok(JudgeVerdict {
            found: false,
            summary: reason.to_string(),
            causes: Vec::new(),
        });
    }
    if !upper.starts_with("FOUND") {
        return Err(format!(
            "unrecognised verdict {:?}",
            text.lines().next().unwrap_or("")
        ));
    }
    let body = text[5..].trim().trim_start_matches(':');
    let mut causes = Vec::new();
    let mut summary = String::new();
    for seg in body
        .split([';', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
    {
        if let Some(s) = seg.strip_prefix("summary:") {
            summary = s.trim().to_string();
            continue;
        }
        let mut locations = Vec::new();
        let mut ty = None;
        for tok in seg.split_whitespace() {
            let Some((k, v)) = tok.split_once('=') else {
                continue;
            };
            let k = k.to_ascii_lowercase();
            if LOCATION_KEYS.contains(&k.as_str()) && !v.is_empty() {
                locations.push(v.to_string());
            } else if k == "type" && !v.is_empty() {
                ty = Some(canonical_type(v));
            }
        }
        if let Some(ty) = ty {
            for location in locations {
                causes.push(RootCause {
                    location,
                    fault_type: ty.clone(),
                    confidence: 1.0,
                });
            }
        }
    }
    if causes.is_empty() {
        return Err("FOUND verdict names no location=... type=... cause".into());
    }
    if summary.is_empty() {
        summary = causes
            .iter()
            .map(|c| format!("{} on {}", c.fault_type, c.location))
            .collect::<Vec<_>>()
            .join(", ");
    }
    Ok(JudgeVerdict {
        found: true,
        summary,
        causes,
    })
}
