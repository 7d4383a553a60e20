//! The tool registry agents act through.
//!
//! Tools fall into four categories: observability (metric, trace and log
//! anomaly detection), analysis (kubectl-style resource inspection), the SOP
//! flow (match, generate, codify, run, match observation) and the terminal
//! `Speak`. Every invocation returns a [`ToolResult`]; failures come back as
//! text observations rather than errors so the episode can react to them.

mod call;
mod detector;
mod dsl;
mod flow;
mod readonly;
mod speak;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{KbError, SopDoc};
use crate::llm::LlmError;

pub use call::{parse_call, ToolCall};
pub use detector::{DetectorConfig, Direction, MetricVerdict, Rule};
pub use dsl::{
    parse_program, run_program, validate_program, FaultKind, Predicate, ProgramCall, ProgramRun,
    RuntimeFault, SopProgram, Statement, StepStatus, TraceEntry, ValueRef, DSL_GRAMMAR,
    MAX_STATEMENTS,
};
pub use flow::{
    code_agent_generate, code_agent_system_prompt, execute, parse_generated_sop,
    sop_agent_system_prompt, FlowEnv, SopContext, CODE_ROLE_TAG, SOP_ROLE_TAG,
};
pub use readonly::{first_anomaly, run_readonly, ReadEnv};
pub use speak::{parse_causes, RootCause, SpeakReport, MAX_ROOT_CAUSES};

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("unknown tool {0}")]
    UnknownTool(String),
    #[error("missing required argument {arg} for {tool}")]
    MissingArg { tool: String, arg: String },
    #[error("unknown argument {arg} for {tool}")]
    UnknownArg { tool: String, arg: String },
    #[error("invalid argument {arg}: {detail}")]
    BadArg { arg: String, detail: String },
    #[error("{0}")]
    NotFound(String),
    #[error("unsupported command {command:?}; supported: {supported}")]
    Unsupported { command: String, supported: String },
    #[error("could not parse generated text: {detail}")]
    GenerationParse { detail: String, raw: String },
    #[error("program validation failed: {}", .0.join("; "))]
    ProgramValidation(Vec<String>),
    #[error("program failed at statement {index}: {detail}")]
    ProgramRuntime { index: usize, detail: String },
    #[error("{0}")]
    Precondition(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error(transparent)]
    Kb(KbError),
}

impl From<KbError> for ToolError {
    fn from(e: KbError) -> Self {
        match e {
            KbError::Backend(b) => ToolError::Backend(b),
            other => ToolError::Kb(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolCategory {
    Observability,
    SopFlow,
    Analysis,
    Terminal,
}

impl fmt::Display for ToolCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToolCategory::Observability => "observability",
            ToolCategory::SopFlow => "sop_flow",
            ToolCategory::Analysis => "analysis",
            ToolCategory::Terminal => "terminal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    /// Semantic type shown in prompts, e.g. `pod id` or `time window`.
    pub kind: String,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
    pub category: ToolCategory,
}

impl ToolSpec {
    fn new(
        name: &str,
        category: ToolCategory,
        description: &str,
        params: &[(&str, &str, bool)],
    ) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            params: params
                .iter()
                .map(|(n, k, r)| ParamSpec {
                    name: n.to_string(),
                    kind: k.to_string(),
                    required: *r,
                })
                .collect(),
            category,
        }
    }

    /// `name(arg: kind, [opt: kind])`
    pub fn signature(&self) -> String {
        let params: Vec<String> = self
            .params
            .iter()
            .map(|p| {
                if p.required {
                    format!("{}: {}", p.name, p.kind)
                } else {
                    format!("[{}: {}]", p.name, p.kind)
                }
            })
            .collect();
        format!("{}({})", self.name, params.join(", "))
    }

    /// Checks argument names against the schema.
    pub fn check_args(&self, args: &BTreeMap<String, String>) -> Result<(), ToolError> {
        for p in self.params.iter().filter(|p| p.required) {
            if !args.contains_key(&p.name) {
                return Err(ToolError::MissingArg {
                    tool: self.name.clone(),
                    arg: p.name.clone(),
                });
            }
        }
        for a in args.keys() {
            if !self.params.iter().any(|p| &p.name == a) {
                return Err(ToolError::UnknownArg {
                    tool: self.name.clone(),
                    arg: a.clone(),
                });
            }
        }
        Ok(())
    }
}

pub const SPEAK: &str = "Speak";
pub const MATCH_SOP: &str = "match_sop";
pub const GENERATE_SOP: &str = "generate_sop";
pub const GENERATE_SOP_CODE: &str = "generate_sop_code";
pub const RUN_SOP: &str = "run_sop";
pub const MATCH_OBSERVATION: &str = "match_observation";

/// Immutable tool catalog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    tools: Vec<ToolSpec>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::standard()
    }
}

impl Registry {
    pub fn standard() -> Self {
        use ToolCategory::*;
        let window = ("window", "time window start-end in seconds", false);
        let tools = vec![
            ToolSpec::new(
                "whether_is_abnormal_metric",
                Observability,
                "Checks metrics for anomalies and reports fault-related text. Without a target every component is checked; without a metric every metric of the target is checked.",
                &[("target", "pod or node id", false), ("metric", "metric name", false), window],
            ),
            ToolSpec::new(
                "collect_trace",
                Observability,
                "Lists error spans across all call chains, grouped by trace.",
                &[window],
            ),
            ToolSpec::new(
                "kubectl_logs",
                Observability,
                "Returns log lines matching anomaly keywords. Without a pod every pod is scanned.",
                &[("pod", "pod id", false), window],
            ),
            ToolSpec::new(
                MATCH_SOP,
                SopFlow,
                "Retrieves the SOPs whose names best match the query.",
                &[("query", "fault description", true)],
            ),
            ToolSpec::new(
                GENERATE_SOP,
                SopFlow,
                "Writes a new SOP for the fault using similar SOPs as examples and stores it.",
                &[("fault_info", "fault description", true), ("parent", "SOP id to refine", false)],
            ),
            ToolSpec::new(
                GENERATE_SOP_CODE,
                SopFlow,
                "Converts an SOP into an executable program. Defaults to the current SOP.",
                &[("sop", "SOP id", false)],
            ),
            ToolSpec::new(
                RUN_SOP,
                SopFlow,
                "Executes the current SOP program from start to finish and reports its findings.",
                &[],
            ),
            ToolSpec::new(
                MATCH_OBSERVATION,
                SopFlow,
                "Recalls historical incidents similar to the observation. Defaults to the last run_sop findings.",
                &[("observation", "symptom text", false)],
            ),
            ToolSpec::new("pod_analyze", Analysis, "Analyzing all pods' status.", &[window]),
            ToolSpec::new("node_analyze", Analysis, "Analyzing all nodes' status.", &[window]),
            ToolSpec::new("service_analyze", Analysis, "Analyzing all services' endpoints.", &[window]),
            ToolSpec::new(
                "deployment_analyze",
                Analysis,
                "Analyzing all deployments' readiness.",
                &[window],
            ),
            ToolSpec::new(
                "statefulset_analyze",
                Analysis,
                "Analyzing all statefulsets' readiness.",
                &[window],
            ),
            ToolSpec::new(
                "run_kubectl_command",
                Analysis,
                "Executes a read-only kubectl command (get pods|nodes|services|deployments|statefulsets|namespaces, describe pod <id>, logs <pod>).",
                &[("command", "kubectl command", true)],
            ),
            ToolSpec::new("get_all_namespace", Analysis, "Obtaining a list of all namespaces.", &[]),
            ToolSpec::new(
                "get_relevant_metric",
                Analysis,
                "Returns up to 5 metric names relevant to the query.",
                &[("query", "metric keyword", true)],
            ),
            ToolSpec::new(
                SPEAK,
                Terminal,
                "Reports the root causes and ends the diagnosis. causes is `location:Type[:confidence]` separated by `;`, at most 3.",
                &[("causes", "root cause list", true), ("explanation", "text", false)],
            ),
        ];
        Self { tools }
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.tools.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn by_category(&self, category: ToolCategory) -> impl Iterator<Item = &ToolSpec> {
        self.tools.iter().filter(move |t| t.category == category)
    }

    pub fn validate_call(&self, call: &ToolCall) -> Result<&ToolSpec, ToolError> {
        let spec = self
            .get(&call.tool)
            .ok_or_else(|| ToolError::UnknownTool(call.tool.clone()))?;
        spec.check_args(&call.args)?;
        Ok(spec)
    }

    /// Prompt-ready listing, one tool per line.
    pub fn catalog_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tools {
            out.push_str(&format!(
                "- {} [{}]: {}\n",
                t.signature(),
                t.category,
                t.description
            ));
        }
        out
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("registry serializes")
    }
}

/// Structured part of a tool result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    None,
    SopHits { hits: Vec<(String, f64)> },
    Sop { sop: SopDoc },
    Program { program: SopProgram },
    ProgramErrors { violations: Vec<String> },
    Run { run: ProgramRun },
    IncidentHits { hits: Vec<(String, String, f64)> },
    Verdicts { verdicts: Vec<MetricVerdict> },
    Diagnosis { report: SpeakReport },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool: String,
    pub observation: String,
    pub payload: Payload,
    pub success: bool,
    pub error: Option<String>,
    /// Component ids the tool reports as abnormal.
    pub flagged: Vec<String>,
    /// Numeric summary usable by program predicates.
    pub value: Option<f64>,
}

impl ToolResult {
    pub fn ok(tool: &str, observation: impl Into<String>) -> Self {
        Self {
            tool: tool.into(),
            observation: observation.into(),
            payload: Payload::None,
            success: true,
            error: None,
            flagged: Vec::new(),
            value: None,
        }
    }

    pub fn failed(tool: &str, err: &ToolError) -> Self {
        Self {
            tool: tool.into(),
            observation: format!("error: {err}"),
            payload: match err {
                ToolError::ProgramValidation(v) => Payload::ProgramErrors {
                    violations: v.clone(),
                },
                ToolError::GenerationParse { detail, .. } => Payload::ProgramErrors {
                    violations: vec![detail.clone()],
                },
                _ => Payload::None,
            },
            success: false,
            error: Some(err.to_string()),
            flagged: Vec::new(),
            value: None,
        }
    }

    pub fn with_payload(mut self, payload: Payload) -> Self {
        self.payload = payload;
        self
    }

    pub fn with_flagged(mut self, flagged: Vec<String>) -> Self {
        self.flagged = flagged;
        self
    }

    pub fn with_value(mut self, value: f64) -> Self {
        self.value = Some(value);
        self
    }

    /// First line of the observation.
    pub fn headline(&self) -> &str {
        self.observation.lines().next().unwrap_or("")
    }

    pub fn is_terminal(&self) -> bool {
        self.success && matches!(self.payload, Payload::Diagnosis { .. })
    }
}
