use serde::{Deserialize, Serialize};

use super::call::ToolCall;
use super::{Payload, ToolError, ToolResult, SPEAK};
use crate::sandbox::FaultType;

pub const MAX_ROOT_CAUSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootCause {
    pub location: String,
    /// Canonical fault type name when recognised, free text otherwise.
    pub fault_type: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakReport {
    pub causes: Vec<RootCause>,
    pub explanation: String,
    pub warnings: Vec<String>,
}

impl SpeakReport {
    pub fn render(&self) -> String {
        let mut s = format!("Root cause report ({} causes)", self.causes.len());
        for (i, c) in self.causes.iter().enumerate() {
            s.push_str(&format!(
                "\n{}. {} {} (confidence {:.2})",
                i + 1,
                c.location,
                c.fault_type,
                c.confidence
            ));
        }
        if !self.explanation.is_empty() {
            s.push_str(&format!("\nexplanation: {}", self.explanation));
        }
        for w in &self.warnings {
            s.push_str(&format!("\nwarning: {w}"));
        }
        s
    }
}

/// Parses `location:Type[:confidence]` entries separated by `;` or newlines.
pub fn parse_causes(text: &str) -> Result<Vec<RootCause>, String> {
    let mut out = Vec::new();
    for entry in text
        .split([';', '\n'])
        .map(str::trim)
        .filter(|e| !e.is_empty())
    {
        let parts: Vec<&str> = entry.split(':').map(str::trim).collect();
        let (location, ty, conf) = match parts.as_slice() {
            [l, t] => (*l, *t, 1.0),
            [l, t, c] => (
                *l,
                *t,
                c.parse::<f64>()
                    .map_err(|_| format!("bad confidence {c:?} in {entry:?}"))?,
            ),
            _ => {
                return Err(format!(
                    "expected location:Type[:confidence], got {entry:?}"
                ))
            }
        };
        if location.is_empty() || ty.is_empty() {
            return Err(format!("empty location or type in {entry:?}"));
        }
        if !(0.0..=1.0).contains(&conf) {
            return Err(format!("confidence {conf} outside [0, 1]"));
        }
        let fault_type = ty
            .parse::<FaultType>()
            .map(|t| t.name().to_string())
            .unwrap_or_else(|_| ty.to_string());
        out.push(RootCause {
            location: location.to_string(),
            fault_type,
            confidence: conf,
        });
    }
    Ok(out)
}

pub(crate) fn speak(call: &ToolCall) -> Result<ToolResult, ToolError> {
    let mut causes =
        parse_causes(call.get("causes").unwrap_or("")).map_err(|d| ToolError::BadArg {
            arg: "causes".into(),
            detail: d,
        })?;
    if causes.is_empty() {
        return Err(ToolError::Validation(
            "Speak requires at least one root cause".into(),
        ));
    }
    let mut warnings = Vec::new();
    if causes.len() > MAX_ROOT_CAUSES {
        warnings.push(format!(
            "{} root causes given, kept the {MAX_ROOT_CAUSES} with highest confidence",
            causes.len()
        ));
        // stable: equal confidence keeps the stated order
        causes.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        causes.truncate(MAX_ROOT_CAUSES);
    }
    let report = SpeakReport {
        causes,
        explanation: call.get("explanation").unwrap_or("").to_string(),
        warnings,
    };
    let flagged = report.causes.iter().map(|c| c.location.clone()).collect();
    Ok(ToolResult::ok(SPEAK, report.render())
        .with_flagged(flagged)
        .with_payload(Payload::Diagnosis { report }))
}
